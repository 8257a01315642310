//! QUBO matrices and bit vectors.
//!
//! A [`QuboMatrix`] is always stored upper-triangular: the objective is
//! `sum_{i <= j} Q[i][j] * x[i] * x[j]`, so any weight living below the
//! diagonal is folded onto its mirror by [`canonicalize`].

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CoreError, Result};
use crate::rng;

/// Candidate qubit configuration, one `0`/`1` byte per variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn zeros(n: usize) -> Self {
        BitVector(vec![0; n])
    }

    pub fn ones(n: usize) -> Self {
        BitVector(vec![1; n])
    }

    /// Panics if any entry is not 0 or 1.
    pub fn from_bits(bits: Vec<u8>) -> Self {
        assert!(
            bits.iter().all(|&b| b <= 1),
            "bit vector entries must be 0 or 1"
        );
        BitVector(bits)
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        BitVector(bits.into_iter().map(u8::from).collect())
    }

    /// Bit 0 is the most significant bit of `code`.
    pub fn from_index(code: u64, n: usize) -> Self {
        BitVector((0..n).map(|i| ((code >> (n - 1 - i)) & 1) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = u8::from(value);
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] ^= 1;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitVector {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(CoreError::invalid(format!("bit string contains {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(BitVector)
    }
}

impl Serialize for BitVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CoreError::invalid(format!(
                "value range requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(ValueRange { lo, hi })
    }

    /// The generation range for random QUBO coefficients.
    pub fn random_qubo_default() -> Self {
        ValueRange {
            lo: -10_000.0,
            hi: 10_000.0,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuboMatrix {
    n: usize,
    coeffs: Vec<f64>,
    offset: f64,
}

impl QuboMatrix {
    /// Builds from an already upper-triangular row-major `n x n` array.
    pub fn new(n: usize, coeffs: Vec<f64>, offset: f64) -> Result<Self> {
        check_square(n, &coeffs)?;
        if !offset.is_finite() {
            return Err(CoreError::invalid("offset is not finite"));
        }
        for i in 0..n {
            for j in 0..i {
                if coeffs[i * n + j] != 0.0 {
                    return Err(CoreError::invalid(format!(
                        "lower-triangle entry ({i}, {j}) is {} (expected 0)",
                        coeffs[i * n + j]
                    )));
                }
            }
        }
        Ok(QuboMatrix { n, coeffs, offset })
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "QUBO needs at least one variable");
        QuboMatrix {
            n,
            coeffs: vec![0.0; n * n],
            offset: 0.0,
        }
    }

    /// Keeps the diagonal and upper triangle of `raw`, discarding the rest.
    /// Used for decoder output, where the lower triangle is reconstruction noise.
    pub fn upper_part(n: usize, raw: &[f64]) -> Result<Self> {
        check_square(n, raw)?;
        let mut coeffs = vec![0.0; n * n];
        for i in 0..n {
            coeffs[i * n + i..(i + 1) * n].copy_from_slice(&raw[i * n + i..(i + 1) * n]);
        }
        Ok(QuboMatrix {
            n,
            coeffs,
            offset: 0.0,
        })
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coeffs[i * self.n + j]
    }

    /// Row-major `n x n` coefficients, lower triangle zero.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sum_{i <= j} Q[i][j] x[i] x[j]`, summed with `i` outer and `j` inner.
    /// The offset is not included; see [`QuboMatrix::penalized_cost`].
    pub fn energy(&self, x: &BitVector) -> Result<f64> {
        self.check_dims(x)?;
        Ok(self.energy_unchecked(x.as_slice()))
    }

    pub(crate) fn energy_unchecked(&self, x: &[u8]) -> f64 {
        let n = self.n;
        let mut e = 0.0;
        for i in 0..n {
            if x[i] == 0 {
                continue;
            }
            let row = &self.coeffs[i * n..(i + 1) * n];
            for j in i..n {
                if x[j] == 1 {
                    e += row[j];
                }
            }
        }
        e
    }

    pub fn penalized_cost(&self, x: &BitVector) -> Result<f64> {
        Ok(self.energy(x)? + self.offset)
    }

    /// Maps every entry (lower triangle included) affinely into `[0, 1]`.
    pub fn normalize(&self, bounds: ValueRange) -> Result<Vec<f64>> {
        let n = self.n;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if bounds.contains(v) {
                    Ok((v - bounds.lo) / bounds.width())
                } else {
                    Err(CoreError::OutOfRange {
                        row: k / n,
                        col: k % n,
                        value: v,
                        lo: bounds.lo,
                        hi: bounds.hi,
                    })
                }
            })
            .collect()
    }

    pub(crate) fn check_dims(&self, x: &BitVector) -> Result<()> {
        if x.len() != self.n {
            return Err(CoreError::invalid(format!(
                "bit vector has {} entries, QUBO has {} variables",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }
}

/// Inverse of [`QuboMatrix::normalize`].
pub fn denormalize(values: &[f64], bounds: ValueRange) -> Vec<f64> {
    values
        .iter()
        .map(|v| bounds.lo + v * bounds.width())
        .collect()
}

fn check_square(n: usize, coeffs: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(CoreError::invalid("QUBO needs at least one variable"));
    }
    if coeffs.len() != n * n {
        return Err(CoreError::invalid(format!(
            "expected {} coefficients for n = {n}, got {}",
            n * n,
            coeffs.len()
        )));
    }
    if let Some(k) = coeffs.iter().position(|v| !v.is_finite()) {
        return Err(CoreError::invalid(format!(
            "entry ({}, {}) is not finite",
            k / n,
            k % n
        )));
    }
    Ok(())
}

/// Folds a full square matrix into upper-triangular form:
/// `Q'[i][j] = Q[i][j] + Q[j][i]` for `i < j`, diagonal unchanged.
pub fn canonicalize(n: usize, raw: &[f64]) -> Result<QuboMatrix> {
    check_square(n, raw)?;
    let mut coeffs = vec![0.0; n * n];
    for i in 0..n {
        coeffs[i * n + i] = raw[i * n + i];
        for j in i + 1..n {
            coeffs[i * n + j] = raw[i * n + j] + raw[j * n + i];
        }
    }
    Ok(QuboMatrix {
        n,
        coeffs,
        offset: 0.0,
    })
}

/// Upper triangle (diagonal included) drawn i.i.d. uniform over `range`.
pub fn random_qubo(n: usize, range: ValueRange, seed: u64) -> QuboMatrix {
    assert!(n >= 1, "QUBO needs at least one variable");
    let mut rng = rng::stream(seed, 0);
    let dist = Uniform::new_inclusive(range.lo, range.hi);
    let mut coeffs = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            coeffs[i * n + j] = dist.sample(&mut rng);
        }
    }
    QuboMatrix {
        n,
        coeffs,
        offset: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q2() -> QuboMatrix {
        QuboMatrix::new(2, vec![1.0, 2.0, 0.0, 3.0], 0.0).unwrap()
    }

    #[test]
    fn energy_examples() {
        let z = QuboMatrix::zeros(4);
        assert_eq!(
            z.energy(&BitVector::from_bits(vec![1, 0, 1, 1])).unwrap(),
            0.0
        );
        assert_eq!(q2().energy(&BitVector::from_bits(vec![1, 1])).unwrap(), 6.0);
        assert_eq!(q2().energy(&BitVector::from_bits(vec![0, 1])).unwrap(), 3.0);
    }

    #[test]
    fn energy_rejects_dimension_mismatch() {
        assert!(matches!(
            q2().energy(&BitVector::zeros(3)),
            Err(CoreError::InvalidArgument(_))
        ));
    }

    #[test]
    fn penalized_cost_adds_offset() {
        let q = q2();
        let x = BitVector::ones(2);
        assert_eq!(q.penalized_cost(&x).unwrap(), q.energy(&x).unwrap());
        assert_eq!(q.with_offset(4.5).penalized_cost(&x).unwrap(), 10.5);
    }

    #[test]
    fn canonicalize_folds_lower_triangle() {
        let c = canonicalize(2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.coeffs(), &[1.0, 5.0, 0.0, 4.0]);
        let upper = [1.0, 2.0, 0.0, 4.0];
        assert_eq!(canonicalize(2, &upper).unwrap().coeffs(), &upper);
    }

    #[test]
    fn canonicalize_rejects_bad_input() {
        assert!(canonicalize(2, &[1.0, 2.0, 3.0]).is_err());
        assert!(canonicalize(2, &[1.0, f64::NAN, 0.0, 1.0]).is_err());
        assert!(canonicalize(0, &[]).is_err());
    }

    #[test]
    fn new_rejects_lower_triangle() {
        assert!(QuboMatrix::new(2, vec![1.0, 0.0, 1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn random_qubo_contract() {
        let range = ValueRange::random_qubo_default();
        let q = random_qubo(16, range, 42);
        for i in 0..16 {
            for j in 0..16 {
                let v = q.get(i, j);
                if j < i {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(range.contains(v));
                }
            }
        }
        assert_eq!(q.offset(), 0.0);
        let again = random_qubo(16, range, 42);
        let a: Vec<u64> = q.coeffs().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = again.coeffs().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_ne!(random_qubo(16, range, 43), q);
    }

    #[test]
    fn normalize_examples() {
        let b = ValueRange::new(-4.0, 4.0).unwrap();
        let q = QuboMatrix::new(2, vec![-4.0, 4.0, 0.0, 1.0], 0.0).unwrap();
        let v = q.normalize(b).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 0.5, 0.625]);
        let back = denormalize(&v, b);
        assert_eq!(back, q.coeffs());
    }

    #[test]
    fn normalize_names_offending_entry() {
        let q = QuboMatrix::new(2, vec![0.0, 9.0, 0.0, 0.0], 0.0).unwrap();
        match q.normalize(ValueRange::new(-1.0, 1.0).unwrap()) {
            Err(CoreError::OutOfRange { row, col, .. }) => assert_eq!((row, col), (0, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn value_range_requires_ordering() {
        assert!(ValueRange::new(1.0, 1.0).is_err());
        assert!(ValueRange::new(2.0, 1.0).is_err());
    }

    #[test]
    fn bit_vector_string_roundtrip() {
        let x: BitVector = "0110".parse().unwrap();
        assert_eq!(x.to_string(), "0110");
        assert!("01x".parse::<BitVector>().is_err());
        assert_eq!(BitVector::from_index(0b0110, 4), x);
    }

    fn full_form_energy(n: usize, raw: &[f64], x: &BitVector) -> f64 {
        // i <= j pairing of the unfolded matrix
        let mut e = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i.min(j), i.max(j));
                if x.get(a) && x.get(b) {
                    e += raw[i * n + j];
                }
            }
        }
        e
    }

    fn small_ints(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec((-50i32..=50).prop_map(f64::from), n * n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn canonicalize_preserves_energy(
            (n, raw, code) in (1usize..=8).prop_flat_map(|n| (Just(n), small_ints(n), 0u64..(1u64 << n)))
        ) {
            let x = BitVector::from_index(code, n);
            let q = canonicalize(n, &raw).unwrap();
            prop_assert_eq!(q.energy(&x).unwrap(), full_form_energy(n, &raw, &x));
        }
    }

    proptest! {
        #[test]
        fn energy_is_linear(n in 1usize..=8, s1 in any::<u64>(), s2 in any::<u64>(), code in any::<u64>()) {
            let range = ValueRange::new(-100.0, 100.0).unwrap();
            let (a, b) = (random_qubo(n, range, s1), random_qubo(n, range, s2));
            let sum: Vec<f64> = a.coeffs().iter().zip(b.coeffs()).map(|(p, q)| p + q).collect();
            let ab = QuboMatrix::new(n, sum, 0.0).unwrap();
            let x = BitVector::from_index(code & ((1 << n) - 1), n);
            let lhs = ab.energy(&x).unwrap();
            let rhs = a.energy(&x).unwrap() + b.energy(&x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn scaling_preserves_minimizers(n in 1usize..=12, seed in any::<u64>(), c in 0.01f64..100.0) {
            let q = random_qubo(n, ValueRange::new(-10.0, 10.0).unwrap(), seed);
            let scaled = QuboMatrix::new(n, q.coeffs().iter().map(|v| v * c).collect(), 0.0).unwrap();
            let energies: Vec<(f64, f64)> = (0..1u64 << n)
                .map(|code| {
                    let x = BitVector::from_index(code, n);
                    (q.energy(&x).unwrap(), scaled.energy(&x).unwrap())
                })
                .collect();
            for &(e, s) in &energies {
                prop_assert!((s - c * e).abs() <= 1e-9 * (1.0 + (c * e).abs()));
            }
            let argmin = |sel: fn(&(f64, f64)) -> f64| {
                let best = energies.iter().map(sel).fold(f64::INFINITY, f64::min);
                energies.iter().position(|p| sel(p) == best).unwrap()
            };
            prop_assert_eq!(argmin(|p| p.0), argmin(|p| p.1));
        }

        #[test]
        fn zero_vector_has_zero_energy(n in 1usize..=16, seed in any::<u64>()) {
            let q = random_qubo(n, ValueRange::random_qubo_default(), seed);
            prop_assert_eq!(q.energy(&BitVector::zeros(n)).unwrap(), 0.0);
        }
    }
}
