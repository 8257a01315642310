//! Accuracy metrics.
//!
//! *Default accuracy* is exact agreement with the label. *After-evaluation
//! accuracy* only asks for the label's energy, which credits equally optimal
//! alternatives such as the reversed tour.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::qubo::{BitVector, QuboMatrix};
use crate::solve;
use crate::tsp::{bits_to_tour, TourDecode};

/// Energies closer than this count as equal.
pub const DEFAULT_ENERGY_TOL: f64 = 1e-6;
/// Per-entry tolerance for autoencoder reconstructions in normalized units.
pub const DEFAULT_RECON_DELTA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Independent per-bit probabilities, thresholded at 0.5.
    Sigmoid,
    /// Softmax over each row of the `m x m` reshape; argmax per row.
    RowwiseSoftmax,
}

impl std::str::FromStr for Head {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Head::Sigmoid),
            "rowwise_softmax" | "softmax" => Ok(Head::RowwiseSoftmax),
            other => Err(CoreError::invalid(format!("unknown head {other:?}"))),
        }
    }
}

pub fn square_side(n: usize) -> Result<usize> {
    let m = (n as f64).sqrt().round() as usize;
    if m * m != n || m == 0 {
        return Err(CoreError::invalid(format!(
            "{n} outputs do not form a square"
        )));
    }
    Ok(m)
}

/// Turns one sample's network output into a configuration.
/// Sigmoid ties (exactly 0.5) become 1; softmax ties go to the lowest index.
pub fn binarize(pred: &[f64], head: Head) -> Result<BitVector> {
    match head {
        Head::Sigmoid => Ok(BitVector::from_bools(pred.iter().map(|&p| p >= 0.5))),
        Head::RowwiseSoftmax => {
            let m = square_side(pred.len())?;
            let mut x = BitVector::zeros(pred.len());
            for row in 0..m {
                let vals = &pred[row * m..(row + 1) * m];
                let mut arg = 0;
                for (j, &v) in vals.iter().enumerate() {
                    if v > vals[arg] {
                        arg = j;
                    }
                }
                x.set(row * m + arg, true);
            }
            Ok(x)
        }
    }
}

fn check_aligned(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(CoreError::invalid(format!("{what}: {a} vs {b} samples")));
    }
    if a == 0 {
        return Err(CoreError::invalid(format!("{what}: no samples")));
    }
    Ok(())
}

pub fn default_accuracy(preds: &[BitVector], labels: &[BitVector]) -> Result<f64> {
    check_aligned(preds.len(), labels.len(), "predictions vs labels")?;
    let mut hits = 0usize;
    for (p, l) in preds.iter().zip(labels) {
        if p.len() != l.len() {
            return Err(CoreError::invalid(format!(
                "prediction has {} bits, label {}",
                p.len(),
                l.len()
            )));
        }
        hits += usize::from(p == l);
    }
    Ok(hits as f64 / preds.len() as f64)
}

fn energy_gaps(
    preds: &[BitVector],
    labels: &[BitVector],
    qubos: &[QuboMatrix],
) -> Result<Vec<f64>> {
    check_aligned(preds.len(), labels.len(), "predictions vs labels")?;
    check_aligned(preds.len(), qubos.len(), "predictions vs qubos")?;
    preds
        .iter()
        .zip(labels)
        .zip(qubos)
        .map(|((p, l), q)| Ok((q.energy(p)? - q.energy(l)?).abs()))
        .collect()
}

pub fn after_eval_accuracy(
    preds: &[BitVector],
    labels: &[BitVector],
    qubos: &[QuboMatrix],
    tol: f64,
) -> Result<f64> {
    let gaps = energy_gaps(preds, labels, qubos)?;
    Ok(gaps.iter().filter(|&&g| g <= tol).count() as f64 / gaps.len() as f64)
}

/// Mean `|E(pred) - E(label)|` over samples that fail the after-evaluation
/// test; 0 when none fail.
pub fn mean_energy_gap(
    preds: &[BitVector],
    labels: &[BitVector],
    qubos: &[QuboMatrix],
    tol: f64,
) -> Result<f64> {
    let gaps = energy_gaps(preds, labels, qubos)?;
    Ok(mean(gaps.into_iter().filter(|&g| g > tol)))
}

/// Mean tour-length difference over mismatches whose prediction decodes to a
/// feasible tour. Uses the penalized cost, which equals the weighted tour
/// length on feasible configurations.
pub fn mean_tour_gap(
    preds: &[BitVector],
    labels: &[BitVector],
    qubos: &[QuboMatrix],
    m: usize,
    tol: f64,
) -> Result<f64> {
    let gaps = energy_gaps(preds, labels, qubos)?;
    let mut feasible_gaps = Vec::new();
    for (p, g) in preds.iter().zip(gaps) {
        if g > tol && matches!(bits_to_tour(p, m)?, TourDecode::Feasible(_)) {
            feasible_gaps.push(g);
        }
    }
    Ok(mean(feasible_gaps.into_iter()))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub default_accuracy: f64,
    pub after_eval_accuracy: f64,
    pub mean_energy_gap: f64,
    pub mean_tour_gap: Option<f64>,
    /// Fraction of predictions that decode to a tour (tsp only).
    pub feasible_fraction: Option<f64>,
    pub sample_count: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "sample_count,default_accuracy,after_eval_accuracy,mean_energy_gap,mean_tour_gap,feasible_fraction";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.sample_count,
            self.default_accuracy,
            self.after_eval_accuracy,
            self.mean_energy_gap,
            opt(self.mean_tour_gap),
            opt(self.feasible_fraction)
        )
    }
}

/// Full solver metric suite. `m` is the city count for tsp-derived QUBOs.
/// Fails with [`CoreError::Invariant`] if after-evaluation accuracy ever
/// falls below default accuracy.
pub fn evaluate_solver(
    preds: &[BitVector],
    labels: &[BitVector],
    qubos: &[QuboMatrix],
    m: Option<usize>,
    tol: f64,
) -> Result<EvalReport> {
    let default = default_accuracy(preds, labels)?;
    let after = after_eval_accuracy(preds, labels, qubos, tol)?;
    if after < default {
        return Err(CoreError::Invariant(format!(
            "after-evaluation accuracy {after} below default accuracy {default}"
        )));
    }
    let (tour_gap, feasible) = match m {
        Some(m) => {
            let feasible = preds
                .iter()
                .map(|p| bits_to_tour(p, m).map(|d| matches!(d, TourDecode::Feasible(_))))
                .collect::<Result<Vec<bool>>>()?;
            let frac = feasible.iter().filter(|&&f| f).count() as f64 / preds.len() as f64;
            (
                Some(mean_tour_gap(preds, labels, qubos, m, tol)?),
                Some(frac),
            )
        }
        None => (None, None),
    };
    Ok(EvalReport {
        default_accuracy: default,
        after_eval_accuracy: after,
        mean_energy_gap: mean_energy_gap(preds, labels, qubos, tol)?,
        mean_tour_gap: tour_gap,
        feasible_fraction: feasible,
        sample_count: preds.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeOutcome {
    pub correct: bool,
    /// Configuration that minimizes the reconstructed matrix.
    pub predicted: BitVector,
    /// `|E(original, predicted) - E(original, label)|`.
    pub gap: f64,
}

/// Solves the reconstructed matrix and checks whether its minimizer is
/// still optimal for the original one.
pub fn ae_after_eval(
    original: &QuboMatrix,
    reconstructed: &QuboMatrix,
    label: &BitVector,
    tol: f64,
    seed: u64,
) -> Result<AeOutcome> {
    if original.n() != reconstructed.n() {
        return Err(CoreError::invalid(format!(
            "original has {} variables, reconstruction {}",
            original.n(),
            reconstructed.n()
        )));
    }
    let predicted = solve::label(reconstructed, seed)?.x;
    let gap = (original.energy(&predicted)? - original.energy(label)?).abs();
    Ok(AeOutcome {
        correct: gap <= tol,
        predicted,
        gap,
    })
}

/// Mean over samples of the fraction of normalized entries reconstructed to
/// within `delta`.
pub fn ae_default_accuracy(recons: &[Vec<f64>], originals: &[Vec<f64>], delta: f64) -> Result<f64> {
    check_aligned(
        recons.len(),
        originals.len(),
        "reconstructions vs originals",
    )?;
    let mut total = 0.0;
    for (r, o) in recons.iter().zip(originals) {
        if r.len() != o.len() || r.is_empty() {
            return Err(CoreError::invalid(format!(
                "reconstruction has {} entries, original {}",
                r.len(),
                o.len()
            )));
        }
        let close = r
            .iter()
            .zip(o)
            .filter(|(a, b)| (*a - *b).abs() <= delta)
            .count();
        total += close as f64 / r.len() as f64;
    }
    Ok(total / recons.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeReport {
    pub default_accuracy: f64,
    pub after_eval_accuracy: f64,
    pub mean_energy_gap: f64,
    pub sample_count: usize,
}

impl AeReport {
    pub const CSV_HEADER: &'static str =
        "sample_count,default_accuracy,after_eval_accuracy,mean_energy_gap";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.sample_count,
            self.default_accuracy,
            self.after_eval_accuracy,
            self.mean_energy_gap
        )
    }

    pub fn from_outcomes(default_accuracy: f64, outcomes: &[AeOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        AeReport {
            default_accuracy,
            after_eval_accuracy: outcomes.iter().filter(|o| o.correct).count() as f64 / n,
            mean_energy_gap: mean(outcomes.iter().filter(|o| !o.correct).map(|o| o.gap)),
            sample_count: outcomes.len(),
        }
    }
}
