//! Symmetric TSP instances and their one-hot QUBO encoding.
//!
//! Variable `v * m + j` is set when city `v` sits at tour position `j`
//! (city-major ordering). The encoding adds, for penalty weight `A` and
//! distance weight `B`:
//!
//! * `A * (sum_j x[v][j] - 1)^2` for every city `v`,
//! * `A * (sum_v x[v][j] - 1)^2` for every position `j`,
//! * `B * D[u][v] * x[u][j] * x[v][j+1]` for every ordered pair `u != v`
//!   and position `j` (cyclic).
//!
//! The constant `2 * A * m` produced by expanding the squares is stored as the
//! matrix offset, so for a feasible configuration the penalized cost is exactly
//! `B * tour_length`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::qubo::{BitVector, QuboMatrix};
use crate::rng;

pub const MIN_DISTANCE: f64 = 1.0;
pub const MAX_DISTANCE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TspInstance {
    m: usize,
    dist: Vec<f64>,
}

impl TspInstance {
    /// Row-major `m x m` distances: symmetric, zero diagonal, off-diagonal in
    /// `[1, 10000]`.
    pub fn new(m: usize, dist: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(CoreError::invalid("TSP instance needs at least one city"));
        }
        if dist.len() != m * m {
            return Err(CoreError::invalid(format!(
                "expected {} distances for {m} cities, got {}",
                m * m,
                dist.len()
            )));
        }
        for k in 0..m {
            if dist[k * m + k] != 0.0 {
                return Err(CoreError::invalid(format!("distance ({k}, {k}) must be 0")));
            }
            for l in k + 1..m {
                let d = dist[k * m + l];
                if d != dist[l * m + k] {
                    return Err(CoreError::invalid(format!(
                        "distances ({k}, {l}) and ({l}, {k}) differ"
                    )));
                }
                if !(MIN_DISTANCE..=MAX_DISTANCE).contains(&d) {
                    return Err(CoreError::invalid(format!(
                        "distance ({k}, {l}) = {d} outside [{MIN_DISTANCE}, {MAX_DISTANCE}]"
                    )));
                }
            }
        }
        Ok(TspInstance { m, dist })
    }

    /// Integer distances uniform over `[1, 10000]`, stored as reals.
    pub fn random(m: usize, seed: u64) -> Self {
        assert!(m >= 1, "TSP instance needs at least one city");
        let mut rng = rng::stream(seed, 1);
        let mut dist = vec![0.0; m * m];
        for k in 0..m {
            for l in k + 1..m {
                let d = f64::from(rng.gen_range(1u32..=10_000));
                dist[k * m + l] = d;
                dist[l * m + k] = d;
            }
        }
        TspInstance { m, dist }
    }

    pub fn cities(&self) -> usize {
        self.m
    }

    pub fn distance(&self, k: usize, l: usize) -> f64 {
        self.dist[k * self.m + l]
    }

    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    pub fn max_distance(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Cyclic length including the closing edge back to the first city.
    pub fn tour_length(&self, tour: &Tour) -> Result<f64> {
        if tour.len() != self.m {
            return Err(CoreError::invalid(format!(
                "tour visits {} cities, instance has {}",
                tour.len(),
                self.m
            )));
        }
        Ok(self.tour_length_unchecked(tour.cities()))
    }

    pub(crate) fn tour_length_unchecked(&self, perm: &[usize]) -> f64 {
        let m = perm.len();
        let mut len = self.distance(perm[m - 1], perm[0]);
        for k in 0..m - 1 {
            len += self.distance(perm[k], perm[k + 1]);
        }
        len
    }
}

/// A permutation of `0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Tour(Vec<usize>);

impl Tour {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let m = perm.len();
        if m == 0 {
            return Err(CoreError::invalid("empty tour"));
        }
        let mut seen = vec![false; m];
        for &c in &perm {
            if c >= m || seen[c] {
                return Err(CoreError::invalid(format!(
                    "{perm:?} is not a permutation of 0..{m}"
                )));
            }
            seen[c] = true;
        }
        Ok(Tour(perm))
    }

    pub fn identity(m: usize) -> Self {
        Tour((0..m).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn cities(&self) -> &[usize] {
        &self.0
    }

    pub fn reversed(&self) -> Tour {
        Tour(self.0.iter().rev().copied().collect())
    }

    pub fn rotated(&self, k: usize) -> Tour {
        let mut v = self.0.clone();
        let len = v.len();
        v.rotate_left(k % len);
        Tour(v)
    }

    /// One-hot encoding: bit `v * m + j` set iff city `v` is at position `j`.
    pub fn to_bits(&self) -> BitVector {
        let m = self.0.len();
        let mut x = BitVector::zeros(m * m);
        for (j, &v) in self.0.iter().enumerate() {
            x.set(v * m + j, true);
        }
        x
    }
}

impl TryFrom<Vec<usize>> for Tour {
    type Error = CoreError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Tour::new(v)
    }
}

impl From<Tour> for Vec<usize> {
    fn from(t: Tour) -> Self {
        t.0
    }
}

impl fmt::Display for Tour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "({})", parts.join(" -> "))
    }
}

/// Rows (cities) and columns (positions) of the `m x m` reshape whose
/// one-hot constraint is violated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Infeasibility {
    pub rows: Vec<usize>,
    pub columns: Vec<usize>,
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "infeasible: cities {:?}, positions {:?}",
            self.rows, self.columns
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TourDecode {
    Feasible(Tour),
    Infeasible(Infeasibility),
}

impl TourDecode {
    pub fn tour(&self) -> Option<&Tour> {
        match self {
            TourDecode::Feasible(t) => Some(t),
            TourDecode::Infeasible(_) => None,
        }
    }
}

pub fn tour_to_bits(tour: &Tour) -> BitVector {
    tour.to_bits()
}

pub fn bits_to_tour(x: &BitVector, m: usize) -> Result<TourDecode> {
    if x.len() != m * m {
        return Err(CoreError::invalid(format!(
            "bit vector has {} entries, {m} cities need {}",
            x.len(),
            m * m
        )));
    }
    let mut rows = Vec::new();
    let mut columns = Vec::new();
    for v in 0..m {
        if (0..m).filter(|&j| x.get(v * m + j)).count() != 1 {
            rows.push(v);
        }
    }
    for j in 0..m {
        if (0..m).filter(|&v| x.get(v * m + j)).count() != 1 {
            columns.push(j);
        }
    }
    if !rows.is_empty() || !columns.is_empty() {
        return Ok(TourDecode::Infeasible(Infeasibility { rows, columns }));
    }
    let perm = (0..m)
        .map(|j| (0..m).find(|&v| x.get(v * m + j)).expect("column checked"))
        .collect();
    Ok(TourDecode::Feasible(Tour(perm)))
}

/// Constraint weight `a` and distance weight `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub a: f64,
    pub b: f64,
}

impl PenaltyConfig {
    /// `b = 1`, `a = 2 * max distance`.
    pub fn default_for(t: &TspInstance) -> Self {
        PenaltyConfig {
            a: 2.0 * t.max_distance().max(MIN_DISTANCE),
            b: 1.0,
        }
    }

    pub fn validate(&self, t: &TspInstance) -> Result<()> {
        if !(self.b > 0.0 && self.a > self.b * t.max_distance()) {
            return Err(CoreError::invalid(format!(
                "penalty weights need b > 0 and a > b * max distance ({}), got a = {}, b = {}",
                t.max_distance(),
                self.a,
                self.b
            )));
        }
        Ok(())
    }
}

pub fn tsp_to_qubo(t: &TspInstance, pc: PenaltyConfig) -> Result<QuboMatrix> {
    pc.validate(t)?;
    let m = t.cities();
    let n = m * m;
    let var = |city: usize, pos: usize| city * m + pos;
    let mut coeffs = vec![0.0; n * n];
    let mut add = |i: usize, j: usize, v: f64| {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        coeffs[i * n + j] += v;
    };

    // each city exactly once
    for v in 0..m {
        for j in 0..m {
            add(var(v, j), var(v, j), -pc.a);
            for k in j + 1..m {
                add(var(v, j), var(v, k), 2.0 * pc.a);
            }
        }
    }
    // each position exactly once
    for j in 0..m {
        for v in 0..m {
            add(var(v, j), var(v, j), -pc.a);
            for u in v + 1..m {
                add(var(v, j), var(u, j), 2.0 * pc.a);
            }
        }
    }
    for u in 0..m {
        for v in 0..m {
            if u == v {
                continue;
            }
            let w = pc.b * t.distance(u, v);
            for j in 0..m {
                add(var(u, j), var(v, (j + 1) % m), w);
            }
        }
    }
    QuboMatrix::new(n, coeffs, 2.0 * pc.a * m as f64)
}
