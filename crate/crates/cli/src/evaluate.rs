use qubo_core::data::{Dataset, Split};
use qubo_core::metrics::{
    self, AeOutcome, AeReport, EvalReport, Head, DEFAULT_ENERGY_TOL, DEFAULT_RECON_DELTA,
};
use qubo_core::rng::split_mix;
use qubo_core::{denormalize, BitVector, QuboMatrix};
use qubo_nn::{Loss, Model, Network, Tensor};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::inputs::{self, SplitTensors};

/// Samples per inference call; bounds activation memory for wide nets.
pub const PREDICT_CHUNK: usize = 50;

pub fn predict(net: &Network, x: &Tensor) -> Result<Tensor> {
    let mut rows: Vec<f64> =
        Vec::with_capacity(x.batch() * net.output_shape().iter().product::<usize>());
    for idx in inputs::chunks(x.batch(), PREDICT_CHUNK) {
        let part = net.predict(&inputs::gather(x, &idx)?)?;
        rows.extend_from_slice(part.data());
    }
    let mut shape = vec![x.batch()];
    shape.extend_from_slice(net.output_shape());
    Ok(Tensor::new(shape, rows)?)
}

/// Loss and metrics of a model on one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Report {
    Autoencoder(AeReport),
    Solver(EvalReport),
}

impl Report {
    pub fn default_accuracy(&self) -> f64 {
        match self {
            Report::Autoencoder(r) => r.default_accuracy,
            Report::Solver(r) => r.default_accuracy,
        }
    }

    pub fn after_eval_accuracy(&self) -> f64 {
        match self {
            Report::Autoencoder(r) => r.after_eval_accuracy,
            Report::Solver(r) => r.after_eval_accuracy,
        }
    }

    pub fn csv(&self) -> String {
        match self {
            Report::Autoencoder(r) => format!("{}\n{}\n", AeReport::CSV_HEADER, r.csv_row()),
            Report::Solver(r) => format!("{}\n{}\n", EvalReport::CSV_HEADER, r.csv_row()),
        }
    }
}

pub struct Assessment {
    pub loss: f64,
    pub report: Report,
    /// Binarized solver outputs, in split order.
    pub bits: Vec<BitVector>,
}

fn head_of(model: &Model) -> Head {
    model.hyper.head.unwrap_or(Head::Sigmoid)
}

fn check_compatible(model: &Model, ds: &Dataset) -> Result<()> {
    let n = ds.manifest.n;
    let expect = [1, n, n];
    if model.net.input_shape() != expect {
        return Err(CliError::Runtime(format!(
            "model input {:?} does not match dataset matrices {:?}",
            model.net.input_shape(),
            expect
        )));
    }
    if !model.arch.is_autoencoder() && model.hyper.output_len != n {
        return Err(CliError::Runtime(format!(
            "model predicts {} bits, dataset has {n} variables",
            model.hyper.output_len
        )));
    }
    Ok(())
}

/// Runs the metric suite that fits `model` over a pre-stacked split.
/// `loss` is the training loss to report (MSE for autoencoders).
pub fn assess(
    model: &Model,
    ds: &Dataset,
    st: &SplitTensors,
    loss: &Loss,
    seed: u64,
) -> Result<Assessment> {
    check_compatible(model, ds)?;
    let pred = predict(&model.net, &st.images)?;
    if model.arch.is_autoencoder() {
        let (value, _) = loss.evaluate(&pred, &st.images)?;
        let report = ae_report(ds, st, &pred, seed)?;
        return Ok(Assessment {
            loss: value,
            report: Report::Autoencoder(report),
            bits: Vec::new(),
        });
    }
    let flat = Tensor::new(vec![pred.batch(), pred.sample_len()], pred.data().to_vec())?;
    let (value, _) = loss.evaluate(&flat, &st.labels)?;
    let bits = (0..flat.batch())
        .map(|i| metrics::binarize(flat.sample(i), head_of(model)))
        .collect::<qubo_core::Result<Vec<_>>>()?;
    let report = solver_report(ds, st, &bits)?;
    Ok(Assessment {
        loss: value,
        report: Report::Solver(report),
        bits,
    })
}

pub fn solver_report(ds: &Dataset, st: &SplitTensors, bits: &[BitVector]) -> Result<EvalReport> {
    let labels: Vec<BitVector> = st.samples.iter().map(|s| s.label.clone()).collect();
    let qubos = st
        .samples
        .iter()
        .map(|s| s.qubo())
        .collect::<qubo_core::Result<Vec<_>>>()?;
    Ok(metrics::evaluate_solver(
        bits,
        &labels,
        &qubos,
        ds.manifest.m,
        DEFAULT_ENERGY_TOL,
    )?)
}

/// Reconstruction metrics: per-entry closeness in normalized units, and
/// whether the minimizer of each denormalized reconstruction is still
/// optimal for the original problem.
pub fn ae_report(ds: &Dataset, st: &SplitTensors, recon: &Tensor, seed: u64) -> Result<AeReport> {
    let n = ds.manifest.n;
    let originals: Vec<Vec<f64>> = (0..st.len())
        .map(|i| st.images.sample(i).to_vec())
        .collect();
    let recons: Vec<Vec<f64>> = (0..st.len()).map(|i| recon.sample(i).to_vec()).collect();
    let default = metrics::ae_default_accuracy(&recons, &originals, DEFAULT_RECON_DELTA)?;
    let outcomes = st
        .samples
        .iter()
        .zip(&recons)
        .map(|(s, r)| -> Result<AeOutcome> {
            let rq = QuboMatrix::upper_part(n, &denormalize(r, ds.manifest.normalization))?;
            Ok(metrics::ae_after_eval(
                &s.qubo()?,
                &rq,
                &s.label,
                DEFAULT_ENERGY_TOL,
                split_mix(seed, s.id),
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AeReport::from_outcomes(default, &outcomes))
}

/// Fraction of configurations with exactly `count` bits set.
pub fn exact_count_fraction(bits: &[BitVector], count: usize) -> f64 {
    if bits.is_empty() {
        return 0.0;
    }
    bits.iter().filter(|b| b.count_ones() == count).count() as f64 / bits.len() as f64
}

/// Evaluates a model on a named split of a dataset.
pub fn evaluate(model: &Model, ds: &Dataset, split: Split, seed: u64) -> Result<Assessment> {
    let st = SplitTensors::new(ds, split)?;
    let loss = if model.arch.is_autoencoder() {
        Loss::Mse
    } else {
        Loss::Bce
    };
    assess(model, ds, &st, &loss, seed)
}
