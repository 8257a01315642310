use qubo_core::data::{Dataset, Sample, Split};
use qubo_nn::Tensor;

use crate::error::Result;

/// Normalized QUBO images of `samples` as a `[batch, 1, n, n]` tensor.
pub fn images(ds: &Dataset, samples: &[&Sample]) -> Result<Tensor> {
    let n = ds.manifest.n;
    let rows = samples
        .iter()
        .map(|s| ds.normalized(s))
        .collect::<qubo_core::Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(Tensor::stack(&[1, n, n], &refs)?)
}

/// Label bit vectors of `samples` as a `[batch, n]` tensor of 0/1 values.
pub fn labels(samples: &[&Sample]) -> Result<Tensor> {
    let n = samples.first().map(|s| s.n).unwrap_or(1);
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.label.as_slice().iter().map(|&b| f64::from(b)).collect())
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(Tensor::stack(&[n], &refs)?)
}

/// Whole split, pre-stacked once for repeated evaluation.
pub struct SplitTensors<'a> {
    pub samples: Vec<&'a Sample>,
    pub images: Tensor,
    pub labels: Tensor,
}

impl<'a> SplitTensors<'a> {
    pub fn new(ds: &'a Dataset, split: Split) -> Result<Self> {
        let samples: Vec<&Sample> = ds.split(split).iter().collect();
        if samples.is_empty() {
            return Err(crate::error::CliError::Runtime(format!(
                "{} split is empty",
                split.name()
            )));
        }
        Ok(SplitTensors {
            images: images(ds, &samples)?,
            labels: labels(&samples)?,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rows `idx` of the stacked images and labels.
    pub fn gather(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        Ok((gather(&self.images, idx)?, gather(&self.labels, idx)?))
    }
}

pub fn gather(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| t.sample(i)).collect();
    Ok(Tensor::stack(t.sample_shape(), &rows)?)
}

/// Splits `0..len` into consecutive chunks of at most `size`.
pub fn chunks(len: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..len)
        .step_by(size.max(1))
        .map(move |s| (s..(s + size).min(len)).collect())
}
