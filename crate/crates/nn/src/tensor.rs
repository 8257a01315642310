use crate::error::{NnError, Result};

/// Dense row-major array whose first axis is the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
            return Err(NnError::invalid(format!("bad tensor shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(NnError::invalid(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::invalid("tensor contains non-finite values"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Stacks equally sized per-sample rows under a leading batch axis.
    pub fn stack(sample_shape: &[usize], rows: &[&[f64]]) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        let mut data = Vec::with_capacity(per * rows.len());
        for r in rows {
            if r.len() != per {
                return Err(NnError::invalid(format!(
                    "row of {} values does not fit sample shape {sample_shape:?}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(sample_shape);
        Tensor::new(shape, data)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[b * len..(b + 1) * len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn reshaped(mut self, sample_shape: &[usize]) -> Self {
        let b = self.shape[0];
        self.shape = std::iter::once(b)
            .chain(sample_shape.iter().copied())
            .collect();
        self
    }
}
