use qubo_core::metrics::Head;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layer::LayerSpec;
use crate::network::Network;
use crate::tensor::Tensor;

/// Channel count of the wide CAE convolutions.
pub const CAE_CHANNELS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    VanillaAe,
    Mlae,
    Cae,
    CnnSolver,
    Combined,
}

impl Arch {
    pub const ALL: [Arch; 5] = [
        Arch::VanillaAe,
        Arch::Mlae,
        Arch::Cae,
        Arch::CnnSolver,
        Arch::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::VanillaAe => "vanilla_ae",
            Arch::Mlae => "mlae",
            Arch::Cae => "cae",
            Arch::CnnSolver => "cnn_solver",
            Arch::Combined => "combined",
        }
    }

    pub fn is_autoencoder(self) -> bool {
        matches!(self, Arch::VanillaAe | Arch::Mlae | Arch::Cae)
    }
}

impl std::str::FromStr for Arch {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| NnError::invalid(format!("unknown architecture {s:?}")))
    }
}

/// Build-time settings recorded alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// `[channels, height, width]` of one input sample.
    pub input_dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Head>,
    /// Flattened output length per sample.
    pub output_len: usize,
    /// Solver outputs are reshaped to this for decoding (`[m, m]`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_reshape: Option<Vec<usize>>,
    /// Autoencoders: index of the layer whose output is the code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_shape: Option<Vec<usize>>,
    /// How far the code exceeds `ceil(ratio * input)` after channel rounding.
    #[serde(default)]
    pub latent_slack: usize,
    /// Layers `0..frozen_prefix` are not trained.
    #[serde(default)]
    pub frozen_prefix: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub arch: Arch,
    pub hyper: Hyperparams,
    pub net: Network,
}

impl Model {
    /// Code of each sample; autoencoders only.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let l = self.latent_layer()?;
        self.net.predict_range(x, 0, l + 1)
    }

    pub fn latent_layer(&self) -> Result<usize> {
        self.hyper
            .latent_layer
            .ok_or_else(|| NnError::invalid(format!("{} has no latent layer", self.arch.name())))
    }

    pub fn latent_len(&self) -> Result<usize> {
        let l = self.latent_layer()?;
        Ok(self.net.layer_output_shape(l).iter().product())
    }
}

fn check_dims(dims: &[usize]) -> Result<(usize, usize, usize)> {
    match *dims {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(NnError::invalid(format!(
            "input dims must be [C, H, W], got {dims:?}"
        ))),
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(NnError::invalid(format!("ratio {ratio} outside (0, 1]")));
    }
    Ok(())
}

/// Builds one of the three autoencoders; the output has the input's shape.
pub fn build_autoencoder(arch: Arch, input_dims: &[usize], ratio: f64, seed: u64) -> Result<Model> {
    let (c, h, w) = check_dims(input_dims)?;
    check_ratio(ratio)?;
    let f = c * h * w;
    let target = ((ratio * f as f64).ceil() as usize).max(1);
    let dims = vec![c, h, w];
    let (layers, latent_layer) = match arch {
        Arch::VanillaAe => (
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: f,
                    outputs: target,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: target,
                    outputs: f,
                },
                LayerSpec::Sigmoid,
                LayerSpec::Reshape {
                    shape: dims.clone(),
                },
            ],
            2,
        ),
        Arch::Mlae => {
            let (ff, lf) = (f as f64, target as f64);
            let w1 = (ff.powf(2.0 / 3.0) * lf.powf(1.0 / 3.0)).round() as usize;
            let w2 = (ff.powf(1.0 / 3.0) * lf.powf(2.0 / 3.0)).round() as usize;
            let widths = [f, w1, w2, target, w2, w1, f];
            let mut layers = vec![LayerSpec::Flatten];
            for (k, pair) in widths.windows(2).enumerate() {
                layers.push(LayerSpec::Dense {
                    inputs: pair[0],
                    outputs: pair[1],
                });
                layers.push(if k == widths.len() - 2 {
                    LayerSpec::Sigmoid
                } else {
                    LayerSpec::Relu
                });
            }
            layers.push(LayerSpec::Reshape {
                shape: dims.clone(),
            });
            (layers, 6)
        }
        Arch::Cae => {
            if h % 4 != 0 || w % 4 != 0 {
                return Err(NnError::invalid(format!(
                    "convolutional autoencoder needs spatial dims divisible by 4, got {h}x{w}"
                )));
            }
            let code = ((CAE_CHANNELS as f64 * ratio).round() as usize).max(1);
            let conv = |i, o| LayerSpec::Conv2d {
                in_channels: i,
                out_channels: o,
            };
            (
                vec![
                    conv(c, CAE_CHANNELS),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2,
                    conv(CAE_CHANNELS, code),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2,
                    conv(code, CAE_CHANNELS),
                    LayerSpec::Relu,
                    LayerSpec::Upsample2,
                    conv(CAE_CHANNELS, CAE_CHANNELS),
                    LayerSpec::Relu,
                    LayerSpec::Upsample2,
                    conv(CAE_CHANNELS, c),
                    LayerSpec::Sigmoid,
                ],
                5,
            )
        }
        other => {
            return Err(NnError::invalid(format!(
                "{} is not an autoencoder",
                other.name()
            )))
        }
    };
    let net = Network::new(dims.clone(), layers, seed)?;
    let latent_shape = net.layer_output_shape(latent_layer).to_vec();
    let latent: usize = latent_shape.iter().product();
    if ratio < 1.0 && latent >= f {
        return Err(NnError::invalid(format!(
            "ratio {ratio} gives a {latent}-value code for a {f}-value input; compression runs need ratio < 1 with a smaller code"
        )));
    }
    Ok(Model {
        arch,
        hyper: Hyperparams {
            input_dims: dims,
            ratio: Some(ratio),
            units: None,
            dropout: None,
            head: None,
            output_len: f,
            output_reshape: None,
            latent_layer: Some(latent_layer),
            latent_shape: Some(latent_shape),
            latent_slack: latent.saturating_sub(target),
            frozen_prefix: 0,
            seed,
        },
        net,
    })
}

pub const SOLVER_CONV_LAYERS: usize = 6;

fn solver_layers(
    input_dims: &[usize],
    output_len: usize,
    units: usize,
    dropout: f64,
    head: Head,
) -> Result<(Vec<LayerSpec>, Option<Vec<usize>>)> {
    let (c, h, w) = check_dims(input_dims)?;
    if units == 0 || output_len == 0 {
        return Err(NnError::invalid("units and output length must be positive"));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(NnError::invalid(format!(
            "dropout rate {dropout} outside [0, 1)"
        )));
    }
    let m = qubo_core::metrics::square_side(output_len).ok();
    let mut layers = Vec::new();
    for k in 0..SOLVER_CONV_LAYERS {
        layers.push(LayerSpec::Conv2d {
            in_channels: if k == 0 { c } else { units },
            out_channels: units,
        });
        layers.push(LayerSpec::Relu);
    }
    let hidden = 2 * output_len;
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense {
        inputs: units * h * w,
        outputs: hidden,
    });
    layers.push(LayerSpec::Relu);
    if dropout > 0.0 {
        layers.push(LayerSpec::Dropout { rate: dropout });
    }
    layers.push(LayerSpec::Dense {
        inputs: hidden,
        outputs: output_len,
    });
    match head {
        Head::Sigmoid => layers.push(LayerSpec::Sigmoid),
        Head::RowwiseSoftmax => {
            let m = m.ok_or_else(|| {
                NnError::invalid(format!(
                    "row-wise softmax needs a square output length, got {output_len}"
                ))
            })?;
            layers.push(LayerSpec::RowwiseSoftmax { row_len: m });
        }
    }
    Ok((layers, m.map(|m| vec![m, m])))
}

/// Six same-padded ReLU convolutions, then `dense(2n) -> relu ->
/// [dropout] -> dense(n) -> head` for an `n`-bit output.
pub fn build_cnn_solver(
    input_dims: &[usize],
    output_len: usize,
    units: usize,
    dropout: f64,
    head: Head,
    seed: u64,
) -> Result<Model> {
    let (layers, reshape) = solver_layers(input_dims, output_len, units, dropout, head)?;
    let net = Network::new(input_dims.to_vec(), layers, seed)?;
    Ok(Model {
        arch: Arch::CnnSolver,
        hyper: Hyperparams {
            input_dims: input_dims.to_vec(),
            ratio: None,
            units: Some(units),
            dropout: Some(dropout),
            head: Some(head),
            output_len,
            output_reshape: reshape,
            latent_layer: None,
            latent_shape: None,
            latent_slack: 0,
            frozen_prefix: 0,
            seed,
        },
        net,
    })
}

/// Prepends the (frozen) encoder half of `autoencoder` to `solver`.
pub fn build_combined(autoencoder: &Model, solver: &Model) -> Result<Model> {
    if !autoencoder.arch.is_autoencoder() {
        return Err(NnError::invalid(format!(
            "{} is not an autoencoder",
            autoencoder.arch.name()
        )));
    }
    if solver.arch != Arch::CnnSolver {
        return Err(NnError::invalid(format!(
            "{} is not a solver",
            solver.arch.name()
        )));
    }
    let l = autoencoder.latent_layer()?;
    let latent = autoencoder.net.layer_output_shape(l);
    if latent != solver.net.input_shape() {
        return Err(NnError::invalid(format!(
            "encoder code shape {latent:?} does not match solver input {:?}",
            solver.net.input_shape()
        )));
    }
    let enc = l + 1;
    let mut layers = autoencoder.net.layers()[..enc].to_vec();
    layers.extend_from_slice(solver.net.layers());
    let mut params = autoencoder.net.params()[..enc].to_vec();
    params.extend_from_slice(solver.net.params());
    let net = Network::from_parts(
        autoencoder.net.input_shape().to_vec(),
        layers,
        params,
        solver.hyper.seed,
        enc,
    )?;
    Ok(Model {
        arch: Arch::Combined,
        hyper: Hyperparams {
            input_dims: autoencoder.hyper.input_dims.clone(),
            ratio: autoencoder.hyper.ratio,
            latent_layer: Some(l),
            latent_shape: Some(latent.to_vec()),
            latent_slack: autoencoder.hyper.latent_slack,
            frozen_prefix: enc,
            ..solver.hyper.clone()
        },
        net,
    })
}

/// Copies every convolution of `src` into `dst` and redraws the dense
/// layers of `dst` from its own seed.
pub fn transfer_weights(src: &Model, dst: &Model) -> Result<Model> {
    let convs = |net: &Network| -> Vec<(usize, usize, usize)> {
        net.layers()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match *l {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                } => Some((i, in_channels, out_channels)),
                _ => None,
            })
            .collect()
    };
    let (a, b) = (convs(&src.net), convs(&dst.net));
    for k in 0..a.len().max(b.len()) {
        match (a.get(k), b.get(k)) {
            (Some(&(_, si, so)), Some(&(di, ti, to))) if (si, so) != (ti, to) => {
                return Err(NnError::Incompatible {
                    index: di,
                    reason: format!("conv {si}->{so} in source, {ti}->{to} in target"),
                })
            }
            (Some(_), Some(_)) => {}
            (Some(&(si, ..)), None) => {
                return Err(NnError::Incompatible {
                    index: si,
                    reason: "source has more convolutions than target".into(),
                })
            }
            (None, Some(&(di, ..))) => {
                return Err(NnError::Incompatible {
                    index: di,
                    reason: "target has more convolutions than source".into(),
                })
            }
            (None, None) => unreachable!(),
        }
    }
    let mut out = dst.clone();
    for (&(si, ..), &(di, ..)) in a.iter().zip(&b) {
        out.net.params_mut()[di] = src.net.params()[si].clone();
    }
    let dense: Vec<usize> = out
        .net
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Dense { .. }))
        .map(|(i, _)| i)
        .collect();
    for i in dense {
        out.net.reinit_layer(i);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_half_has_128_hidden() {
        let m = build_autoencoder(Arch::VanillaAe, &[1, 16, 16], 0.5, 0).unwrap();
        assert_eq!(m.latent_len().unwrap(), 128);
        assert_eq!(m.net.output_shape(), &[1, 16, 16]);
    }

    #[test]
    fn cae_quarter_latent() {
        let m = build_autoencoder(Arch::Cae, &[1, 16, 16], 0.25, 0).unwrap();
        assert_eq!(m.hyper.latent_shape.as_deref(), Some(&[4, 4, 4][..]));
        assert_eq!(m.latent_len().unwrap(), 64);
        assert_eq!(m.net.output_shape(), &[1, 16, 16]);
        assert!(build_autoencoder(Arch::Cae, &[1, 18, 16], 0.25, 0).is_err());
    }

    #[test]
    fn mlae_widths_are_geometric() {
        let m = build_autoencoder(Arch::Mlae, &[1, 16, 16], 0.125, 0).unwrap();
        let widths: Vec<usize> = m
            .net
            .layers()
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .collect();
        assert_eq!(widths, vec![128, 64, 32, 64, 128, 256]);
        assert_eq!(m.latent_len().unwrap(), 32);
    }

    #[test]
    fn ratio_boundaries() {
        for arch in [Arch::VanillaAe, Arch::Mlae, Arch::Cae] {
            assert!(build_autoencoder(arch, &[1, 16, 16], 0.0, 0).is_err());
            assert!(build_autoencoder(arch, &[1, 16, 16], 1.5, 0).is_err());
            assert!(build_autoencoder(arch, &[1, 16, 16], 0.999, 0).is_err());
        }
        let base = build_autoencoder(Arch::VanillaAe, &[1, 16, 16], 1.0, 0).unwrap();
        assert_eq!(base.latent_len().unwrap(), 256);
    }

    #[test]
    fn latent_bound_holds() {
        for arch in [Arch::VanillaAe, Arch::Mlae, Arch::Cae] {
            for ratio in [0.1, 0.2, 0.25, 0.3, 0.5, 0.75] {
                let m = build_autoencoder(arch, &[1, 16, 16], ratio, 1).unwrap();
                let bound = (ratio * 256.0_f64).ceil() as usize + m.hyper.latent_slack;
                assert!(m.latent_len().unwrap() <= bound);
            }
        }
    }

    #[test]
    fn solver_shapes() {
        let m = build_cnn_solver(&[1, 16, 16], 16, 8, 0.5, Head::Sigmoid, 0).unwrap();
        assert_eq!(m.net.output_shape(), &[16]);
        assert_eq!(m.hyper.output_reshape, Some(vec![4, 4]));
        assert_eq!(
            m.net
                .layers()
                .iter()
                .filter(|l| matches!(l, LayerSpec::Conv2d { .. }))
                .count(),
            6
        );
        let s = build_cnn_solver(&[1, 16, 16], 16, 4, 0.0, Head::RowwiseSoftmax, 0).unwrap();
        assert_eq!(
            s.net.layers().last(),
            Some(&LayerSpec::RowwiseSoftmax { row_len: 4 })
        );
        assert!(!s
            .net
            .layers()
            .iter()
            .any(|l| matches!(l, LayerSpec::Dropout { .. })));
        assert!(build_cnn_solver(&[1, 16, 16], 15, 4, 0.0, Head::RowwiseSoftmax, 0).is_err());
    }

    #[test]
    fn solver_builder_is_deterministic() {
        let a = build_cnn_solver(&[1, 8, 8], 16, 4, 0.5, Head::Sigmoid, 77).unwrap();
        let b = build_cnn_solver(&[1, 8, 8], 16, 4, 0.5, Head::Sigmoid, 77).unwrap();
        assert_eq!(a.net.params(), b.net.params());
    }

    #[test]
    fn combined_composes_exactly() {
        let ae = build_autoencoder(Arch::Cae, &[1, 16, 16], 0.25, 3).unwrap();
        let solver = build_cnn_solver(&[4, 4, 4], 16, 4, 0.0, Head::Sigmoid, 4).unwrap();
        let c = build_combined(&ae, &solver).unwrap();
        assert_eq!(c.net.output_shape(), &[16]);
        assert_eq!(c.net.frozen_prefix(), 6);
        let x = Tensor::new(
            vec![2, 1, 16, 16],
            (0..512).map(|i| (i as f64 * 0.013).cos().abs()).collect(),
        )
        .unwrap();
        let direct = solver.net.predict(&ae.encode(&x).unwrap()).unwrap();
        assert_eq!(c.net.predict(&x).unwrap(), direct);
        let wrong = build_cnn_solver(&[1, 16, 16], 16, 4, 0.0, Head::Sigmoid, 4).unwrap();
        assert!(build_combined(&ae, &wrong).is_err());
    }

    #[test]
    fn transfer_copies_convs_and_reinits_dense() {
        let src = build_cnn_solver(&[1, 16, 16], 16, 4, 0.5, Head::Sigmoid, 1).unwrap();
        let dst = build_cnn_solver(&[1, 64, 64], 64, 4, 0.0, Head::Sigmoid, 2).unwrap();
        let out = transfer_weights(&src, &dst).unwrap();
        let mut copied = 0;
        for (i, l) in out.net.layers().iter().enumerate() {
            match l {
                LayerSpec::Conv2d { .. } => {
                    assert_eq!(out.net.params()[i], src.net.params()[copied * 2]);
                    copied += 1;
                }
                LayerSpec::Dense { .. } => assert_eq!(out.net.params()[i], dst.net.params()[i]),
                _ => {}
            }
        }
        assert_eq!(copied, 6);

        // The copied conv stack evaluated on a source-sized input.
        let prefix = 2 * SOLVER_CONV_LAYERS;
        let stack = Network::from_parts(
            vec![1, 16, 16],
            out.net.layers()[..prefix].to_vec(),
            out.net.params()[..prefix].to_vec(),
            0,
            0,
        )
        .unwrap();
        let x = Tensor::new(
            vec![1, 1, 16, 16],
            (0..256).map(|i| (i % 7) as f64 / 7.0).collect(),
        )
        .unwrap();
        assert_eq!(
            stack.predict(&x).unwrap(),
            src.net.predict_range(&x, 0, prefix).unwrap()
        );

        let other = build_cnn_solver(&[1, 64, 64], 64, 8, 0.0, Head::Sigmoid, 2).unwrap();
        assert!(matches!(
            transfer_weights(&src, &other),
            Err(NnError::Incompatible { index: 0, .. })
        ));
    }
}
