use std::fmt;
use std::fs;
use std::path::Path;

use qubo_core::data::{DatasetKind, DatasetManifest, Sample};
use qubo_core::metrics::{binarize, Head};
use qubo_core::{
    anneal_qubo, bits_to_tour, brute_force_qubo, canonicalize, AnnealParams, BitVector, QuboMatrix,
    TourDecode,
};
use qubo_nn::{Model, Tensor};

use crate::error::{CliError, Result};

/// A problem read from disk: either one dataset record or a bare matrix.
#[derive(Debug, Clone)]
pub struct Problem {
    pub q: QuboMatrix,
    /// City count when the problem is a TSP encoding.
    pub m: Option<usize>,
    pub sample: Option<Sample>,
}

/// Reads line `index` of a JSON-lines split file, or a whitespace/comma
/// separated `n x n` matrix (any lower-triangle entries are folded into
/// the upper triangle).
pub fn read_problem(path: &Path, index: usize) -> Result<Problem> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let line = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .nth(index)
            .ok_or_else(|| {
                CliError::Runtime(format!("{} has no record {index}", path.display()))
            })?;
        let sample: Sample = serde_json::from_str(line)?;
        let q = sample.qubo()?;
        let m = match sample.kind {
            DatasetKind::Tsp => sample.m,
            DatasetKind::Random => None,
        };
        return Ok(Problem {
            q,
            m,
            sample: Some(sample),
        });
    }
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Runtime(format!("{}: bad number {t:?}", path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = (values.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != values.len() {
        return Err(CliError::Runtime(format!(
            "{}: {} values do not form a square matrix",
            path.display(),
            values.len()
        )));
    }
    Ok(Problem {
        q: canonicalize(n, &values)?,
        m: None,
        sample: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: BitVector,
    pub energy: f64,
    pub penalized_cost: f64,
    pub decoded: Option<TourDecode>,
}

impl Solution {
    pub fn new(problem: &Problem, x: BitVector) -> Result<Self> {
        let decoded = problem.m.map(|m| bits_to_tour(&x, m)).transpose()?;
        Ok(Solution {
            energy: problem.q.energy(&x)?,
            penalized_cost: problem.q.penalized_cost(&x)?,
            decoded,
            x,
        })
    }
}

impl fmt::Display for Solution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bits: {}", self.x)?;
        writeln!(f, "energy: {}", self.energy)?;
        writeln!(f, "penalized_cost: {}", self.penalized_cost)?;
        match &self.decoded {
            Some(TourDecode::Feasible(t)) => writeln!(f, "tour: {t}"),
            Some(TourDecode::Infeasible(inf)) => writeln!(f, "{inf}"),
            None => Ok(()),
        }
    }
}

pub fn solve_brute(problem: &Problem) -> Result<Solution> {
    Solution::new(problem, brute_force_qubo(&problem.q)?.x)
}

pub fn solve_anneal(problem: &Problem, seed: u64) -> Result<Solution> {
    let params = AnnealParams::default_for(&problem.q, seed);
    Solution::new(problem, anneal_qubo(&problem.q, &params)?.x)
}

/// Runs a trained solver on the problem normalized by the dataset bounds.
pub fn solve_nn(problem: &Problem, model: &Model, manifest: &DatasetManifest) -> Result<Solution> {
    if model.arch.is_autoencoder() {
        return Err(CliError::Runtime(format!(
            "{} is an autoencoder, not a solver",
            model.arch.name()
        )));
    }
    let n = problem.q.n();
    if model.net.input_shape() != [1, n, n] || model.hyper.output_len != n {
        return Err(CliError::Runtime(format!(
            "model input {:?} does not fit a {n}-variable problem",
            model.net.input_shape()
        )));
    }
    let image = problem.q.normalize(manifest.normalization)?;
    let pred = model.net.predict(&Tensor::new(vec![1, 1, n, n], image)?)?;
    let x = binarize(pred.data(), model.hyper.head.unwrap_or(Head::Sigmoid))?;
    Solution::new(problem, x)
}
