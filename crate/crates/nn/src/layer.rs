use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::ops::{self, ConvGeom};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// 3x3 kernel, stride 1, zero "same" padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool2,
    Upsample2,
    Dropout {
        rate: f64,
    },
    Relu,
    Sigmoid,
    /// Softmax over consecutive runs of `row_len` values of the flattened sample.
    RowwiseSoftmax {
        row_len: usize,
    },
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::Upsample2 => "upsample2",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::RowwiseSoftmax { .. } => "rowwise_softmax",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// `(weight_len, bias_len)`.
    pub fn param_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => (out_channels * in_channels * 9, out_channels),
            _ => (0, 0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d { in_channels, .. } => in_channels * 9,
            _ => 0,
        }
    }

    fn fan_out(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv2d { out_channels, .. } => out_channels * 9,
            _ => 0,
        }
    }

    /// Per-sample output shape, or a shape error naming layer `index`.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let err = |reason: String| NnError::Shape {
            index,
            kind: self.kind(),
            reason,
        };
        let len: usize = input.iter().product();
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if *inputs == 0 || *outputs == 0 {
                    return Err(err("widths must be positive".into()));
                }
                if input.len() != 1 || input[0] != *inputs {
                    return Err(err(format!("expects [{inputs}], got {input:?}")));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => {
                if *in_channels == 0 || *out_channels == 0 {
                    return Err(err("channel counts must be positive".into()));
                }
                if input.len() != 3 || input[0] != *in_channels {
                    return Err(err(format!("expects [{in_channels}, H, W], got {input:?}")));
                }
                Ok(vec![*out_channels, input[1], input[2]])
            }
            LayerSpec::MaxPool2 => {
                if input.len() != 3 || !input[1].is_multiple_of(2) || !input[2].is_multiple_of(2) {
                    return Err(err(format!(
                        "expects [C, H, W] with even H and W, got {input:?}"
                    )));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            LayerSpec::Upsample2 => {
                if input.len() != 3 {
                    return Err(err(format!("expects [C, H, W], got {input:?}")));
                }
                Ok(vec![input[0], input[1] * 2, input[2] * 2])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(err(format!("rate {rate} outside [0, 1)")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::RowwiseSoftmax { row_len } => {
                if *row_len == 0 || !len.is_multiple_of(*row_len) {
                    return Err(err(format!(
                        "{len} values do not split into rows of {row_len}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![len]),
            LayerSpec::Reshape { shape } => {
                if shape.is_empty() || shape.len() > 3 || shape.iter().product::<usize>() != len {
                    return Err(err(format!("cannot reshape {input:?} to {shape:?}")));
                }
                Ok(shape.clone())
            }
        }
    }
}

/// Weights and biases of one layer; both empty for parameter-free layers.
/// Dense weights are `(inputs, outputs)` row-major; conv weights are
/// `(out_channels, in_channels, 3, 3)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Params {
    pub fn empty() -> Self {
        Params::default()
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view index `k` over weights then biases.
    pub fn get(&self, k: usize) -> f64 {
        if k < self.weight.len() {
            self.weight[k]
        } else {
            self.bias[k - self.weight.len()]
        }
    }

    pub fn get_mut(&mut self, k: usize) -> &mut f64 {
        let wl = self.weight.len();
        if k < wl {
            &mut self.weight[k]
        } else {
            &mut self.bias[k - wl]
        }
    }
}

/// Fan-scaled uniform init: He bound `sqrt(6 / fan_in)` when the layer feeds
/// a ReLU, Glorot bound `sqrt(6 / (fan_in + fan_out))` otherwise. Biases zero.
pub(crate) fn init_params(spec: &LayerSpec, feeds_relu: bool, rng: &mut impl Rng) -> Params {
    let (wl, bl) = spec.param_shape();
    if wl == 0 {
        return Params::empty();
    }
    let bound = if feeds_relu {
        (6.0 / spec.fan_in() as f64).sqrt()
    } else {
        (6.0 / (spec.fan_in() + spec.fan_out()) as f64).sqrt()
    };
    let weight = (0..wl).map(|_| rng.gen_range(-bound..=bound)).collect();
    Params {
        weight,
        bias: vec![0.0; bl],
    }
}

/// What a layer keeps from its forward pass for backward.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Nothing,
    Input(Tensor),
    Output(Tensor),
    Argmax(Vec<u8>),
    /// Dropout mask scaled by `1 / (1 - rate)`; `None` in eval mode.
    Mask(Option<Vec<f64>>),
}

pub(crate) fn forward(
    spec: &LayerSpec,
    params: &Params,
    in_shape: &[usize],
    out_shape: &[usize],
    x: Tensor,
    rng: Option<&mut dyn rand::RngCore>,
) -> (Tensor, Cache) {
    let batch = x.batch();
    let out_full = |data: Vec<f64>| {
        let shape = std::iter::once(batch)
            .chain(out_shape.iter().copied())
            .collect();
        Tensor::from_parts(shape, data)
    };
    match spec {
        LayerSpec::Dense { inputs, outputs } => {
            let y = ops::dense_forward(
                x.data(),
                batch,
                *inputs,
                *outputs,
                &params.weight,
                &params.bias,
            );
            (out_full(y), Cache::Input(x))
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
        } => {
            let g = ConvGeom {
                c_in: *in_channels,
                c_out: *out_channels,
                h: in_shape[1],
                w: in_shape[2],
            };
            let y = ops::conv_forward(x.data(), batch, g, &params.weight, &params.bias);
            (out_full(y), Cache::Input(x))
        }
        LayerSpec::MaxPool2 => {
            let (y, arg) =
                ops::maxpool_forward(x.data(), batch * in_shape[0], in_shape[1], in_shape[2]);
            (out_full(y), Cache::Argmax(arg))
        }
        LayerSpec::Upsample2 => {
            let y = ops::upsample_forward(x.data(), batch * in_shape[0], in_shape[1], in_shape[2]);
            (out_full(y), Cache::Nothing)
        }
        LayerSpec::Dropout { rate } => match rng {
            Some(rng) if *rate > 0.0 => {
                let scale = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.data().len())
                    .map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { scale })
                    .collect();
                let y = x.data().iter().zip(&mask).map(|(v, k)| v * k).collect();
                (out_full(y), Cache::Mask(Some(mask)))
            }
            _ => (x, Cache::Mask(None)),
        },
        LayerSpec::Relu => {
            let y = x
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect();
            (out_full(y), Cache::Input(x))
        }
        LayerSpec::Sigmoid => {
            let y = out_full(x.data().iter().map(|&v| ops::sigmoid(v)).collect());
            (y.clone(), Cache::Output(y))
        }
        LayerSpec::RowwiseSoftmax { row_len } => {
            let y = out_full(ops::softmax_rows(x.data(), *row_len));
            (y.clone(), Cache::Output(y))
        }
        LayerSpec::Flatten | LayerSpec::Reshape { .. } => (x.reshaped(out_shape), Cache::Nothing),
    }
}

/// Returns the gradient with respect to the layer input (when `need_dx`)
/// and the parameter gradients.
pub(crate) fn backward(
    spec: &LayerSpec,
    params: &Params,
    in_shape: &[usize],
    cache: &Cache,
    grad: Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Params) {
    let batch = grad.batch();
    let in_full = |data: Vec<f64>| {
        let shape = std::iter::once(batch)
            .chain(in_shape.iter().copied())
            .collect();
        Tensor::from_parts(shape, data)
    };
    match (spec, cache) {
        (LayerSpec::Dense { inputs, outputs }, Cache::Input(x)) => {
            let (dw, db, dx) = ops::dense_backward(
                x.data(),
                grad.data(),
                batch,
                *inputs,
                *outputs,
                &params.weight,
                need_dx,
            );
            (
                dx.map(in_full),
                Params {
                    weight: dw,
                    bias: db,
                },
            )
        }
        (
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            },
            Cache::Input(x),
        ) => {
            let g = ConvGeom {
                c_in: *in_channels,
                c_out: *out_channels,
                h: in_shape[1],
                w: in_shape[2],
            };
            let (dw, db, dx) =
                ops::conv_backward(x.data(), grad.data(), batch, g, &params.weight, need_dx);
            (
                dx.map(in_full),
                Params {
                    weight: dw,
                    bias: db,
                },
            )
        }
        (LayerSpec::MaxPool2, Cache::Argmax(arg)) => {
            let dx = need_dx.then(|| {
                in_full(ops::maxpool_backward(
                    grad.data(),
                    arg,
                    batch * in_shape[0],
                    in_shape[1],
                    in_shape[2],
                ))
            });
            (dx, Params::empty())
        }
        (LayerSpec::Upsample2, _) => {
            let dx = need_dx.then(|| {
                in_full(ops::upsample_backward(
                    grad.data(),
                    batch * in_shape[0],
                    in_shape[1],
                    in_shape[2],
                ))
            });
            (dx, Params::empty())
        }
        (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
            let dx = need_dx.then(|| match mask {
                Some(mask) => in_full(grad.data().iter().zip(mask).map(|(g, k)| g * k).collect()),
                None => grad,
            });
            (dx, Params::empty())
        }
        (LayerSpec::Relu, Cache::Input(x)) => {
            let dx = need_dx.then(|| {
                in_full(
                    grad.data()
                        .iter()
                        .zip(x.data())
                        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                        .collect(),
                )
            });
            (dx, Params::empty())
        }
        (LayerSpec::Sigmoid, Cache::Output(y)) => {
            let dx = need_dx.then(|| {
                in_full(
                    grad.data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect(),
                )
            });
            (dx, Params::empty())
        }
        (LayerSpec::RowwiseSoftmax { row_len }, Cache::Output(y)) => {
            let dx = need_dx.then(|| {
                let mut dx = Vec::with_capacity(y.data().len());
                for (gr, yr) in grad
                    .data()
                    .chunks_exact(*row_len)
                    .zip(y.data().chunks_exact(*row_len))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, s)| g * s).sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, s)| s * (g - dot)));
                }
                in_full(dx)
            });
            (dx, Params::empty())
        }
        (LayerSpec::Flatten | LayerSpec::Reshape { .. }, _) => {
            (need_dx.then(|| grad.reshaped(in_shape)), Params::empty())
        }
        _ => unreachable!("cache kind does not match layer {}", spec.kind()),
    }
}

/// Appends the non-smooth branch choices recorded in `cache`: ReLU signs and
/// max-pool winners. Finite differences are only valid while these stay put.
pub(crate) fn kink_pattern(spec: &LayerSpec, cache: &Cache, out: &mut Vec<u8>) {
    match (spec, cache) {
        (LayerSpec::Relu, Cache::Input(x)) => {
            out.extend(x.data().iter().map(|&z| u8::from(z > 0.0)))
        }
        (LayerSpec::MaxPool2, Cache::Argmax(arg)) => out.extend_from_slice(arg),
        _ => {}
    }
}
