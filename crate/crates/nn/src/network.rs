use rand::RngCore;

use crate::error::{NnError, Result};
use crate::layer::{self, Cache, LayerSpec, Params};
use crate::tensor::Tensor;

/// Forward-pass mode. Training mode carries the generator that draws
/// dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Ordered stack of layers with their parameters.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Per-sample output shape of each layer.
    shapes: Vec<Vec<usize>>,
    params: Vec<Params>,
    rng_seed: u64,
    frozen: usize,
    cache: Option<Vec<Cache>>,
    cached_batch: usize,
}

impl Network {
    /// Builds a network and initializes its parameters from `rng_seed`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, rng_seed: u64) -> Result<Self> {
        let shapes = infer_shapes(&input_shape, &layers)?;
        let params = (0..layers.len())
            .map(|i| init_layer(&layers, i, rng_seed))
            .collect();
        Ok(Network {
            input_shape,
            layers,
            shapes,
            params,
            rng_seed,
            frozen: 0,
            cache: None,
            cached_batch: 0,
        })
    }

    /// Reassembles a network from stored parameters.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: Vec<Params>,
        rng_seed: u64,
        frozen: usize,
    ) -> Result<Self> {
        let shapes = infer_shapes(&input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(NnError::invalid(format!(
                "{} parameter sets for {} layers",
                params.len(),
                layers.len()
            )));
        }
        for (i, (spec, p)) in layers.iter().zip(&params).enumerate() {
            let (wl, bl) = spec.param_shape();
            if p.weight.len() != wl || p.bias.len() != bl {
                return Err(NnError::Shape {
                    index: i,
                    kind: spec.kind(),
                    reason: format!(
                        "expects {wl} weights and {bl} biases, got {} and {}",
                        p.weight.len(),
                        p.bias.len()
                    ),
                });
            }
        }
        if frozen > layers.len() {
            return Err(NnError::invalid(format!(
                "frozen prefix {frozen} exceeds {} layers",
                layers.len()
            )));
        }
        Ok(Network {
            input_shape,
            layers,
            shapes,
            params,
            rng_seed,
            frozen,
            cache: None,
            cached_batch: 0,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes
            .last()
            .map(Vec::as_slice)
            .unwrap_or(&self.input_shape)
    }

    /// Per-sample output shape of layer `i`.
    pub fn layer_output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Params] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Params] {
        self.cache = None;
        &mut self.params
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Params::len).sum()
    }

    /// Layers `0..frozen_prefix()` receive no gradients.
    pub fn frozen_prefix(&self) -> usize {
        self.frozen
    }

    pub fn set_frozen_prefix(&mut self, frozen: usize) -> Result<()> {
        if frozen > self.layers.len() {
            return Err(NnError::invalid(format!(
                "frozen prefix {frozen} exceeds {} layers",
                self.layers.len()
            )));
        }
        self.frozen = frozen;
        Ok(())
    }

    /// Redraws the parameters of layer `i` from this network's seed.
    pub fn reinit_layer(&mut self, i: usize) {
        self.params[i] = init_layer(&self.layers, i, self.rng_seed);
        self.cache = None;
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.sample_shape() != self.input_shape.as_slice() {
            let (kind, index) = self
                .layers
                .first()
                .map(|l| (l.kind(), 0))
                .unwrap_or(("input", 0));
            return Err(NnError::Shape {
                index,
                kind,
                reason: format!(
                    "expects samples of shape {:?}, got {:?}",
                    self.input_shape,
                    x.sample_shape()
                ),
            });
        }
        Ok(())
    }

    /// Runs the batch through every layer and caches what backward needs.
    pub fn forward(&mut self, x: &Tensor, mut mode: Mode<'_>) -> Result<Tensor> {
        self.check_input(x)?;
        self.cache = None;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            let rng: Option<&mut dyn RngCore> = match &mut mode {
                Mode::Train(r) => Some(&mut **r),
                Mode::Eval => None,
            };
            let (y, c) = layer::forward(
                &self.layers[i],
                &self.params[i],
                self.in_shape(i),
                &self.shapes[i],
                h,
                rng,
            );
            caches.push(c);
            h = y;
        }
        self.cache = Some(caches);
        self.cached_batch = x.batch();
        Ok(h)
    }

    /// Eval-mode forward without caching.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_range(x, 0, self.layers.len())
    }

    /// Eval-mode forward through layers `from..to`; `x` must have the input
    /// shape of layer `from`.
    pub fn predict_range(&self, x: &Tensor, from: usize, to: usize) -> Result<Tensor> {
        if from > to || to > self.layers.len() {
            return Err(NnError::invalid(format!("bad layer range {from}..{to}")));
        }
        if x.sample_shape() != self.in_shape(from) {
            return Err(NnError::Shape {
                index: from,
                kind: self
                    .layers
                    .get(from)
                    .map(LayerSpec::kind)
                    .unwrap_or("output"),
                reason: format!(
                    "expects samples of shape {:?}, got {:?}",
                    self.in_shape(from),
                    x.sample_shape()
                ),
            });
        }
        let mut h = x.clone();
        for i in from..to {
            h = layer::forward(
                &self.layers[i],
                &self.params[i],
                self.in_shape(i),
                &self.shapes[i],
                h,
                None,
            )
            .0;
        }
        Ok(h)
    }

    /// Reverse pass for the cached batch. Returns one gradient set per layer;
    /// frozen and parameter-free layers get empty sets.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Params>> {
        let caches = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let batch = self.cached_batch;
        if upstream.sample_shape() != self.output_shape() {
            return Err(NnError::invalid(format!(
                "upstream gradient has sample shape {:?}, network output is {:?}",
                upstream.sample_shape(),
                self.output_shape()
            )));
        }
        if upstream.batch() != batch {
            return Err(NnError::invalid(
                "upstream batch size differs from cached forward",
            ));
        }
        let mut grads = vec![Params::empty(); self.layers.len()];
        let mut g = Some(upstream.clone());
        for i in (self.frozen..self.layers.len()).rev() {
            let grad = g.take().expect("gradient present for unfrozen layers");
            let need_dx = i > self.frozen;
            let (dx, dp) = layer::backward(
                &self.layers[i],
                &self.params[i],
                self.in_shape(i),
                &caches[i],
                grad,
                need_dx,
            );
            grads[i] = dp;
            g = dx;
        }
        Ok(grads)
    }

    /// ReLU sign and max-pool winner pattern of the cached forward pass.
    pub fn kink_signature(&self) -> Result<Vec<u8>> {
        let caches = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let mut out = Vec::new();
        for (spec, c) in self.layers.iter().zip(caches) {
            layer::kink_pattern(spec, c, &mut out);
        }
        Ok(out)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn in_shape(&self, i: usize) -> &[usize] {
        if i == 0 {
            &self.input_shape
        } else {
            &self.shapes[i - 1]
        }
    }
}

fn infer_shapes(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.len() > 3 || input_shape.contains(&0) {
        return Err(NnError::invalid(format!("bad input shape {input_shape:?}")));
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input_shape.to_vec();
    for (i, l) in layers.iter().enumerate() {
        cur = l.output_shape(i, &cur)?;
        shapes.push(cur.clone());
    }
    Ok(shapes)
}

fn init_layer(layers: &[LayerSpec], i: usize, seed: u64) -> Params {
    let feeds_relu = matches!(layers.get(i + 1), Some(LayerSpec::Relu));
    let mut rng = qubo_core::rng::stream(seed, i as u64);
    layer::init_params(&layers[i], feeds_relu, &mut rng)
}
