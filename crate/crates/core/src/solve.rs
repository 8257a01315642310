//! Classical oracles: exhaustive QUBO and TSP search, and a seeded
//! single-bit-flip simulated annealer for instances too large to enumerate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::qubo::{BitVector, QuboMatrix};
use crate::rng;
use crate::tsp::{PenaltyConfig, Tour, TspInstance};

pub const MAX_BRUTE_FORCE_VARS: usize = 24;
pub const MAX_BRUTE_FORCE_CITIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Brute,
    Anneal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: BitVector,
    /// Always `energy(q, x)` recomputed exactly, never an accumulated value.
    pub energy: f64,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealParams {
    pub restarts: usize,
    /// Full passes over all variables per restart.
    pub sweeps: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl AnnealParams {
    /// 20 restarts of `200 n` sweeps, cooling from `max |Q|` to a thousandth of it.
    pub fn default_for(q: &QuboMatrix, seed: u64) -> Self {
        let scale = q.max_abs();
        let t_start = if scale > 0.0 { scale } else { 1.0 };
        AnnealParams {
            restarts: 20,
            sweeps: 200 * q.n(),
            t_start,
            t_end: 1e-3 * t_start,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.sweeps == 0 {
            return Err(CoreError::invalid(
                "annealing needs at least one restart and one sweep",
            ));
        }
        if !(self.t_end > 0.0 && self.t_start > self.t_end && self.t_start.is_finite()) {
            return Err(CoreError::invalid(format!(
                "annealing needs t_start > t_end > 0, got {} and {}",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    fn temperature(&self, sweep: usize) -> f64 {
        if self.sweeps == 1 {
            return self.t_start;
        }
        let frac = sweep as f64 / (self.sweeps - 1) as f64;
        self.t_start * (self.t_end / self.t_start).powf(frac)
    }
}

/// Symmetric coupling view of an upper-triangular QUBO together with the
/// local field `sum_{j != i} Q~[i][j] x[j]` of every variable, so that the
/// energy change of a single flip costs O(1) and the update after an
/// accepted flip costs O(n). Fields are recomputed from scratch every `n`
/// flips so rounding drift stays bounded on long runs.
#[derive(Debug, Clone)]
pub struct LocalFields {
    n: usize,
    diag: Vec<f64>,
    coupling: Vec<f64>,
    field: Vec<f64>,
    x: Vec<u8>,
    since_refresh: usize,
}

impl LocalFields {
    pub fn new(q: &QuboMatrix, x: &BitVector) -> Result<Self> {
        q.check_dims(x)?;
        let n = q.n();
        let mut coupling = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = q.get(i, j);
                coupling[i * n + j] = v;
                coupling[j * n + i] = v;
            }
        }
        let mut fields = LocalFields {
            n,
            diag: (0..n).map(|i| q.get(i, i)).collect(),
            coupling,
            field: vec![0.0; n],
            x: x.as_slice().to_vec(),
            since_refresh: 0,
        };
        fields.refresh();
        Ok(fields)
    }

    fn refresh(&mut self) {
        let n = self.n;
        for i in 0..n {
            let row = &self.coupling[i * n..(i + 1) * n];
            self.field[i] = row
                .iter()
                .zip(&self.x)
                .filter(|(_, &b)| b == 1)
                .map(|(c, _)| c)
                .sum();
        }
        self.since_refresh = 0;
    }

    /// Energy change from flipping bit `i`.
    #[inline]
    pub fn delta(&self, i: usize) -> f64 {
        let sign = if self.x[i] == 1 { -1.0 } else { 1.0 };
        sign * (self.diag[i] + self.field[i])
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        let n = self.n;
        let step = if self.x[i] == 1 { -1.0 } else { 1.0 };
        self.x[i] ^= 1;
        let row = &self.coupling[i * n..(i + 1) * n];
        for (f, c) in self.field.iter_mut().zip(row) {
            *f += step * c;
        }
        self.since_refresh += 1;
        if self.since_refresh >= n {
            self.refresh();
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.x
    }
}

/// Exhaustive search over all `2^n` configurations in Gray-code order.
/// Ties resolve to the lexicographically smallest vector (bit 0 first).
pub fn brute_force_qubo(q: &QuboMatrix) -> Result<SolveResult> {
    let n = q.n();
    if n > MAX_BRUTE_FORCE_VARS {
        return Err(CoreError::Capacity(format!(
            "brute force is capped at {MAX_BRUTE_FORCE_VARS} variables (got {n}); use anneal_qubo"
        )));
    }
    // The running energy is accumulated incrementally, so it can drift by a
    // few ulps of the coefficient mass. Anything within `slack` of the best
    // running value is re-scored exactly before it can win.
    let mass: f64 = q.coeffs().iter().map(|v| v.abs()).sum();
    let slack = 1e-7 * mass;

    let mut fields = LocalFields::new(q, &BitVector::zeros(n))?;
    let mut running = 0.0;
    let mut best_running = 0.0;
    let mut best_code = 0u64;
    let mut best_exact = 0.0;

    let total = 1u64 << n;
    let mut code = 0u64;
    for k in 1..total {
        let pos = k.trailing_zeros() as usize;
        let var = n - 1 - pos;
        running += fields.delta(var);
        fields.flip(var);
        code ^= 1 << pos;

        if running <= best_running + slack {
            let exact = q.energy_unchecked(fields.bits());
            if exact < best_exact || (exact == best_exact && code < best_code) {
                best_exact = exact;
                best_code = code;
            }
            best_running = best_running.min(running);
        }
    }

    let x = BitVector::from_index(best_code, n);
    Ok(SolveResult {
        energy: q.energy_unchecked(x.as_slice()),
        x,
        method: Method::Brute,
    })
}

/// Optimal tour starting at city 0; among equally short tours the
/// lexicographically smallest permutation wins.
pub fn brute_force_tsp(t: &TspInstance) -> Result<Tour> {
    let m = t.cities();
    if m > MAX_BRUTE_FORCE_CITIES {
        return Err(CoreError::Capacity(format!(
            "exhaustive TSP search is capped at {MAX_BRUTE_FORCE_CITIES} cities (got {m})"
        )));
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = perm.clone();
    let mut best_len = t.tour_length_unchecked(&perm);
    while next_permutation(&mut perm[1..]) {
        let len = t.tour_length_unchecked(&perm);
        if len < best_len {
            best_len = len;
            best.copy_from_slice(&perm);
        }
    }
    Tour::new(best)
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len())
        .rev()
        .find(|&j| v[j] > v[i])
        .expect("successor exists");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Simulated annealing with a geometric schedule. Each restart draws from its
/// own stream of `params.seed`, and the best configuration seen by any
/// restart is returned.
pub fn anneal_qubo(q: &QuboMatrix, params: &AnnealParams) -> Result<SolveResult> {
    params.validate()?;
    let n = q.n();
    let mut best: Option<(f64, Vec<u8>)> = None;

    for restart in 0..params.restarts {
        let mut rng = rng::stream(params.seed, restart as u64);
        let start = BitVector::from_bools((0..n).map(|_| rng.gen::<bool>()));
        let mut fields = LocalFields::new(q, &start)?;
        let mut current = q.energy_unchecked(fields.bits());
        let mut local_best = current;
        let mut local_x = fields.bits().to_vec();

        for sweep in 0..params.sweeps {
            let temp = params.temperature(sweep);
            for i in 0..n {
                let delta = fields.delta(i);
                if delta <= 0.0 || rng.gen::<f64>() < (-delta / temp).exp() {
                    fields.flip(i);
                    current += delta;
                    if current < local_best {
                        local_best = current;
                        local_x.copy_from_slice(fields.bits());
                    }
                }
            }
        }

        let exact = q.energy_unchecked(&local_x);
        if best.as_ref().is_none_or(|(e, _)| exact < *e) {
            best = Some((exact, local_x));
        }
    }

    let (energy, bits) = best.expect("at least one restart");
    Ok(SolveResult {
        x: BitVector::from_bits(bits),
        energy,
        method: Method::Anneal,
    })
}

/// Label for an arbitrary QUBO: exhaustive when small enough, otherwise
/// annealed with default parameters seeded by `seed`.
pub fn label(q: &QuboMatrix, seed: u64) -> Result<SolveResult> {
    if q.n() <= MAX_BRUTE_FORCE_VARS {
        brute_force_qubo(q)
    } else {
        anneal_qubo(q, &AnnealParams::default_for(q, seed))
    }
}

/// Exact label for a TSP-derived QUBO: the canonical optimal tour, encoded.
pub fn label_tsp(t: &TspInstance, q: &QuboMatrix) -> Result<(Tour, SolveResult)> {
    let tour = brute_force_tsp(t)?;
    let x = tour.to_bits();
    let energy = q.energy(&x)?;
    Ok((
        tour,
        SolveResult {
            x,
            energy,
            method: Method::Brute,
        },
    ))
}

/// Convenience used by dataset generation and the CLI.
pub fn encode_and_label(t: &TspInstance) -> Result<(QuboMatrix, Tour, SolveResult)> {
    let q = crate::tsp::tsp_to_qubo(t, PenaltyConfig::default_for(t))?;
    let (tour, res) = label_tsp(t, &q)?;
    Ok((q, tour, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubo::{random_qubo, ValueRange};

    /// Plain enumeration with the same tie rule, no incremental tricks.
    fn naive_min(q: &QuboMatrix) -> (f64, BitVector) {
        let n = q.n();
        let mut best = (f64::INFINITY, BitVector::zeros(n));
        for code in 0..1u64 << n {
            let x = BitVector::from_index(code, n);
            let e = q.energy(&x).unwrap();
            if e < best.0 {
                best = (e, x);
            }
        }
        best
    }

    #[test]
    fn zero_matrix_picks_all_zeros() {
        let r = brute_force_qubo(&QuboMatrix::zeros(4)).unwrap();
        assert_eq!(r.x, BitVector::zeros(4));
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.method, Method::Brute);
    }

    #[test]
    fn negative_diagonal_picks_all_ones() {
        let mut c = vec![0.0; 25];
        for i in 0..5 {
            c[i * 5 + i] = -1.0;
        }
        let r = brute_force_qubo(&QuboMatrix::new(5, c, 0.0).unwrap()).unwrap();
        assert_eq!(r.x, BitVector::ones(5));
        assert_eq!(r.energy, -5.0);
    }

    #[test]
    fn brute_force_matches_naive_enumeration() {
        for seed in 0..30 {
            let n = 1 + (seed as usize % 10);
            let q = random_qubo(n, ValueRange::new(-5.0, 5.0).unwrap(), seed);
            let r = brute_force_qubo(&q).unwrap();
            let (e, x) = naive_min(&q);
            assert_eq!(r.energy, e);
            assert_eq!(r.x, x);
        }
    }

    #[test]
    fn brute_force_tie_break_on_integer_ties() {
        // x0 and x1 are interchangeable: both [1,0] and [0,1] reach -1
        let q = QuboMatrix::new(2, vec![-1.0, 1.0, 0.0, -1.0], 0.0).unwrap();
        let r = brute_force_qubo(&q).unwrap();
        assert_eq!(r.x.to_string(), "01");
    }

    #[test]
    fn brute_force_capacity() {
        let err = brute_force_qubo(&QuboMatrix::zeros(25)).unwrap_err();
        assert!(matches!(err, CoreError::Capacity(ref m) if m.contains("anneal_qubo")));
    }

    #[test]
    fn tsp_tie_break_is_canonical() {
        let dist = (0..9)
            .map(|k| if k / 3 == k % 3 { 0.0 } else { 5.0 })
            .collect();
        let t = TspInstance::new(3, dist).unwrap();
        assert_eq!(brute_force_tsp(&t).unwrap().cities(), &[0, 1, 2]);
    }

    #[test]
    fn tsp_optimum_matches_enumeration() {
        for seed in 0..20 {
            let t = TspInstance::random(5, seed);
            let tour = brute_force_tsp(&t).unwrap();
            assert_eq!(tour.cities()[0], 0);
            let mut perm: Vec<usize> = (0..5).collect();
            let mut best = f64::INFINITY;
            loop {
                best = best.min(t.tour_length(&Tour::new(perm.clone()).unwrap()).unwrap());
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            assert_eq!(t.tour_length(&tour).unwrap(), best);
        }
    }

    #[test]
    fn tsp_capacity() {
        assert!(matches!(
            brute_force_tsp(&TspInstance::random(11, 0)),
            Err(CoreError::Capacity(_))
        ));
    }

    #[test]
    fn anneal_zero_matrix() {
        let q = QuboMatrix::zeros(6);
        let r = anneal_qubo(&q, &AnnealParams::default_for(&q, 3)).unwrap();
        assert_eq!(r.energy, 0.0);
        assert_eq!(r.method, Method::Anneal);
    }

    #[test]
    fn anneal_is_deterministic() {
        let q = random_qubo(12, ValueRange::random_qubo_default(), 5);
        let p = AnnealParams::default_for(&q, 77);
        assert_eq!(anneal_qubo(&q, &p).unwrap(), anneal_qubo(&q, &p).unwrap());
    }

    #[test]
    fn anneal_never_beats_brute_force() {
        for seed in 0..10 {
            let q = random_qubo(10, ValueRange::random_qubo_default(), seed);
            let mut p = AnnealParams::default_for(&q, seed);
            p.restarts = 2;
            p.sweeps = 20;
            let a = anneal_qubo(&q, &p).unwrap();
            assert!(a.energy >= brute_force_qubo(&q).unwrap().energy);
            assert_eq!(a.energy, q.energy(&a.x).unwrap());
        }
    }

    #[test]
    fn anneal_rejects_bad_schedule() {
        let q = QuboMatrix::zeros(2);
        let mut p = AnnealParams::default_for(&q, 0);
        p.t_end = p.t_start;
        assert!(anneal_qubo(&q, &p).is_err());
        p.t_end = 0.0;
        assert!(anneal_qubo(&q, &p).is_err());
    }

    #[test]
    fn incremental_delta_matches_recomputation() {
        let q = random_qubo(20, ValueRange::random_qubo_default(), 99);
        let mut r = rng::stream(99, 0);
        let x = BitVector::from_bools((0..20).map(|_| r.gen::<bool>()));
        let mut fields = LocalFields::new(&q, &x).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..100_000 {
            let i = r.gen_range(0..20);
            let before = q.energy_unchecked(fields.bits());
            let predicted = fields.delta(i);
            fields.flip(i);
            let after = q.energy_unchecked(fields.bits());
            worst = worst.max((after - before - predicted).abs());
        }
        assert!(worst <= 1e-9, "max |dE error| = {worst}");
    }

    #[test]
    fn label_dispatch() {
        let small = random_qubo(16, ValueRange::random_qubo_default(), 1);
        assert_eq!(label(&small, 1).unwrap().method, Method::Brute);
        let mut p = random_qubo(64, ValueRange::random_qubo_default(), 1);
        assert_eq!(label(&p, 1).unwrap().method, Method::Anneal);
        p = p.with_offset(0.0);
        assert_eq!(label(&p, 1).unwrap(), label(&p, 1).unwrap());
    }

    #[test]
    fn tsp_label_energy_plus_offset_is_optimal_length() {
        for seed in 0..10 {
            let t = TspInstance::random(4, seed);
            let (q, tour, res) = encode_and_label(&t).unwrap();
            let opt = t.tour_length(&tour).unwrap();
            assert_eq!(res.energy + q.offset(), opt);
            assert_eq!(res.x, tour.to_bits());
        }
    }
}
