//! Straightforward eval-mode forward pass and losses in double-double
//! precision. Slow; exists so finite differences are not swamped by the
//! rounding noise of the fast f64 path.

use crate::dd::Dd;
use crate::layer::{LayerSpec, Params};
use crate::loss::{Loss, BCE_EPS};
use crate::network::Network;
use crate::tensor::Tensor;

/// Network output plus the ReLU sign / max-pool winner pattern.
pub(crate) struct Evaluation {
    pub output: Vec<Dd>,
    pub kinks: Vec<u8>,
}

/// Input activations and kink patterns of every layer, so that re-evaluation
/// after perturbing layer `k` can start at layer `k`.
pub(crate) struct Trace {
    inputs: Vec<Vec<Dd>>,
    kinks: Vec<Vec<u8>>,
    batch: usize,
}

pub(crate) fn trace(net: &Network, x: &Tensor) -> Trace {
    let batch = x.batch();
    let mut h: Vec<Dd> = x.data().iter().map(|&v| Dd::from(v)).collect();
    let mut inputs = Vec::with_capacity(net.layers().len());
    let mut kinks = Vec::with_capacity(net.layers().len());
    for (i, spec) in net.layers().iter().enumerate() {
        let mut k = Vec::new();
        let y = layer(
            spec,
            &net.params()[i],
            in_shape(net, i),
            batch,
            h.clone(),
            &mut k,
        );
        inputs.push(h);
        kinks.push(k);
        h = y;
    }
    inputs.push(h);
    Trace {
        inputs,
        kinks,
        batch,
    }
}

impl Trace {
    #[cfg(test)]
    pub fn output(&self) -> &[Dd] {
        self.inputs.last().expect("trace holds the network output")
    }

    pub fn kinks(&self) -> Vec<u8> {
        self.kinks.concat()
    }
}

fn in_shape(net: &Network, i: usize) -> &[usize] {
    if i == 0 {
        net.input_shape()
    } else {
        net.layer_output_shape(i - 1)
    }
}

/// Evaluates `net` reusing `trace` (taken with the same input) for layers
/// before `start`, whose parameters must be unchanged.
pub(crate) fn forward_from(net: &Network, trace: &Trace, start: usize) -> Evaluation {
    let mut h = trace.inputs[start].clone();
    let mut kinks = trace.kinks[..start].concat();
    for (i, spec) in net.layers().iter().enumerate().skip(start) {
        h = layer(
            spec,
            &net.params()[i],
            in_shape(net, i),
            trace.batch,
            h,
            &mut kinks,
        );
    }
    Evaluation { output: h, kinks }
}

fn layer(
    spec: &LayerSpec,
    p: &Params,
    shape: &[usize],
    batch: usize,
    x: Vec<Dd>,
    kinks: &mut Vec<u8>,
) -> Vec<Dd> {
    match *spec {
        LayerSpec::Dense { inputs, outputs } => {
            let mut y = Vec::with_capacity(batch * outputs);
            for b in 0..batch {
                let row = &x[b * inputs..(b + 1) * inputs];
                for o in 0..outputs {
                    let mut acc = Dd::from(p.bias[o]);
                    for (k, v) in row.iter().enumerate() {
                        acc = acc + *v * p.weight[k * outputs + o];
                    }
                    y.push(acc);
                }
            }
            y
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
        } => {
            let (h, w) = (shape[1], shape[2]);
            let mut y = Vec::with_capacity(batch * out_channels * h * w);
            for b in 0..batch {
                for o in 0..out_channels {
                    for yy in 0..h {
                        for xx in 0..w {
                            let mut acc = Dd::from(p.bias[o]);
                            for c in 0..in_channels {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (sy, sx) = (yy + ky, xx + kx);
                                        if sy < 1 || sx < 1 || sy > h || sx > w {
                                            continue;
                                        }
                                        let v =
                                            x[((b * in_channels + c) * h + sy - 1) * w + sx - 1];
                                        acc = acc
                                            + v * p.weight[(o * in_channels + c) * 9 + ky * 3 + kx];
                                    }
                                }
                            }
                            y.push(acc);
                        }
                    }
                }
            }
            y
        }
        LayerSpec::MaxPool2 => {
            let (planes, h, w) = (batch * shape[0], shape[1], shape[2]);
            let mut y = Vec::with_capacity(planes * h * w / 4);
            for pl in 0..planes {
                for oy in 0..h / 2 {
                    for ox in 0..w / 2 {
                        let idx = |k: usize| pl * h * w + (2 * oy + k / 2) * w + 2 * ox + k % 2;
                        let mut best = 0;
                        for k in 1..4 {
                            if x[idx(k)] > x[idx(best)] {
                                best = k;
                            }
                        }
                        kinks.push(best as u8);
                        y.push(x[idx(best)]);
                    }
                }
            }
            y
        }
        LayerSpec::Upsample2 => {
            let (planes, h, w) = (batch * shape[0], shape[1], shape[2]);
            let mut y = Vec::with_capacity(planes * h * w * 4);
            for pl in 0..planes {
                for oy in 0..2 * h {
                    for ox in 0..2 * w {
                        y.push(x[pl * h * w + (oy / 2) * w + ox / 2]);
                    }
                }
            }
            y
        }
        LayerSpec::Dropout { .. } | LayerSpec::Flatten | LayerSpec::Reshape { .. } => x,
        LayerSpec::Relu => x
            .into_iter()
            .map(|v| {
                let on = v.is_positive();
                kinks.push(u8::from(on));
                if on {
                    v
                } else {
                    Dd::ZERO
                }
            })
            .collect(),
        LayerSpec::Sigmoid => x
            .into_iter()
            .map(|v| Dd::ONE / ((-v).exp() + 1.0))
            .collect(),
        LayerSpec::RowwiseSoftmax { row_len } => {
            let mut y = Vec::with_capacity(x.len());
            for row in x.chunks_exact(row_len) {
                let max = row
                    .iter()
                    .copied()
                    .fold(row[0], |a, b| if b > a { b } else { a });
                let e: Vec<Dd> = row.iter().map(|&v| (v - max).exp()).collect();
                let sum = e.iter().fold(Dd::ZERO, |a, &b| a + b);
                y.extend(e.into_iter().map(|v| v / sum));
            }
            y
        }
    }
}

pub(crate) fn loss(loss: &Loss, pred: &[Dd], target: &Tensor) -> Dd {
    let n = pred.len() as f64;
    let bce = |pred: &[Dd]| {
        let lo = Dd::from(BCE_EPS);
        let hi = Dd::ONE - BCE_EPS;
        let mut sum = Dd::ZERO;
        for (&p, &y) in pred.iter().zip(target.data()) {
            let q = if p < lo {
                lo
            } else if p > hi {
                hi
            } else {
                p
            };
            sum = sum - (q.ln() * y + (Dd::ONE - q).ln() * (1.0 - y));
        }
        sum / n
    };
    match *loss {
        Loss::Mse => {
            let mut sum = Dd::ZERO;
            for (&p, &t) in pred.iter().zip(target.data()) {
                let d = p - t;
                sum = sum + d * d;
            }
            sum / n
        }
        Loss::Bce => bce(pred),
        Loss::ConstrainedBce {
            m,
            lambda1,
            lambda2,
        } => {
            let batch = target.batch();
            let (len, mf) = (m * m, m as f64);
            let mut count = Dd::ZERO;
            let mut rows = Dd::ZERO;
            for s in 0..batch {
                let sample = &pred[s * len..(s + 1) * len];
                let total = sample.iter().fold(Dd::ZERO, |a, &b| a + b) - mf;
                count = count + total * total / (mf * mf);
                for row in sample.chunks_exact(m) {
                    let r = row.iter().fold(Dd::ZERO, |a, &b| a + b) - 1.0;
                    rows = rows + r * r / mf;
                }
            }
            bce(pred) + count * lambda1 / batch as f64 + rows * lambda2 / batch as f64
        }
    }
}
