use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Prediction clamp used by the cross-entropy losses.
pub const BCE_EPS: f64 = 1e-7;

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    Mse,
    Bce,
    ConstrainedBce {
        m: usize,
        lambda1: f64,
        lambda2: f64,
    },
}

impl Loss {
    pub fn constrained(m: usize) -> Self {
        Loss::ConstrainedBce {
            m,
            lambda1: DEFAULT_LAMBDA,
            lambda2: DEFAULT_LAMBDA,
        }
    }

    /// Loss value and gradient with respect to `pred`.
    pub fn evaluate(&self, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        match *self {
            Loss::Mse => mse(pred, target),
            Loss::Bce => bce(pred, target),
            Loss::ConstrainedBce {
                m,
                lambda1,
                lambda2,
            } => constrained_bce(pred, target, m, lambda1, lambda2),
        }
    }
}

fn bce_term(p: f64, y: f64) -> f64 {
    let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
}

/// Compensated (Neumaier) accumulator; keeps loss values accurate enough
/// for finite-difference checks on large outputs.
#[derive(Default)]
struct Sum {
    hi: f64,
    lo: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.hi + v;
        if self.hi.abs() >= v.abs() {
            self.lo += (self.hi - t) + v;
        } else {
            self.lo += (v - t) + self.hi;
        }
        self.hi = t;
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

fn check_shapes(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(NnError::invalid(format!(
            "prediction shape {:?} differs from target shape {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check_shapes(pred, target)?;
    let n = pred.data().len() as f64;
    let mut sum = Sum::default();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            sum.add(d * d);
            2.0 * d / n
        })
        .collect();
    Ok((
        sum.value() / n,
        Tensor::from_parts(pred.shape().to_vec(), grad),
    ))
}

/// Mean binary cross-entropy with predictions clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
///
/// The gradient is evaluated at the clamped prediction even where the clamp
/// is active, so saturated outputs still receive a restoring signal.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check_shapes(pred, target)?;
    let n = pred.data().len() as f64;
    let mut sum = Sum::default();
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            sum.add(bce_term(p, y));
            (q - y) / (q * (1.0 - q)) / n
        })
        .collect();
    Ok((
        sum.value() / n,
        Tensor::from_parts(pred.shape().to_vec(), grad),
    ))
}

/// Penalty terms of [`constrained_bce`], averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintTerms {
    /// `mean_b ((sum_i p_i) - m)^2 / m^2`
    pub count: f64,
    /// `mean_b sum_v ((sum_j p_vj) - 1)^2 / m`
    pub rows: f64,
}

fn check_square(pred: &Tensor, m: usize) -> Result<()> {
    if m == 0 || pred.sample_len() != m * m {
        return Err(NnError::invalid(format!(
            "constrained loss needs {m}x{m} = {} values per sample, got {}",
            m * m,
            pred.sample_len()
        )));
    }
    Ok(())
}

pub fn constraint_terms(pred: &Tensor, m: usize) -> Result<ConstraintTerms> {
    check_square(pred, m)?;
    let (mf, b) = (m as f64, pred.batch() as f64);
    let mut count = 0.0;
    let mut rows = 0.0;
    for s in 0..pred.batch() {
        let p = pred.sample(s);
        let total: f64 = p.iter().sum();
        count += (total - mf).powi(2) / (mf * mf);
        for row in p.chunks_exact(m) {
            rows += (row.iter().sum::<f64>() - 1.0).powi(2) / mf;
        }
    }
    Ok(ConstraintTerms {
        count: count / b,
        rows: rows / b,
    })
}

/// BCE plus penalties on the number of set bits and on each city row
/// (variables `v * m .. v * m + m`) not summing to one.
pub fn constrained_bce(
    pred: &Tensor,
    target: &Tensor,
    m: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<(f64, Tensor)> {
    check_square(pred, m)?;
    let (base, mut grad) = bce(pred, target)?;
    let terms = constraint_terms(pred, m)?;
    let (mf, b) = (m as f64, pred.batch() as f64);
    let len = pred.sample_len();
    for s in 0..pred.batch() {
        let p = pred.sample(s);
        let total: f64 = p.iter().sum();
        let g_count = lambda1 * 2.0 * (total - mf) / (mf * mf) / b;
        let row_sums: Vec<f64> = p.chunks_exact(m).map(|r| r.iter().sum()).collect();
        let gs = &mut grad.data_mut()[s * len..(s + 1) * len];
        for (v, chunk) in gs.chunks_exact_mut(m).enumerate() {
            let g_row = lambda2 * 2.0 * (row_sums[v] - 1.0) / mf / b;
            for g in chunk {
                *g += g_count + g_row;
            }
        }
    }
    Ok((base + lambda1 * terms.count + lambda2 * terms.rows, grad))
}
