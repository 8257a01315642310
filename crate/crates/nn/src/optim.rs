use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layer::Params;
use crate::network::Network;

pub const ADAM_ALPHA: f64 = 0.001;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const SGD_DECAY_RATE: f64 = 0.96;
pub const SGD_DECAY_STEPS: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdDecay { lr0: f64 },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    m: Vec<Params>,
    v: Vec<Params>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Result<Self> {
        if let OptimizerKind::SgdDecay { lr0 } = kind {
            if !(lr0.is_finite() && lr0 > 0.0) {
                return Err(NnError::invalid(format!(
                    "learning rate {lr0} must be positive"
                )));
            }
        }
        Ok(Optimizer {
            kind,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn adam() -> Self {
        Optimizer::new(OptimizerKind::Adam).expect("adam has no arguments")
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Decayed SGD rate `lr0 * 0.96^(t / 5000)` for the next step.
    pub fn sgd_learning_rate(lr0: f64, step: u64) -> f64 {
        lr0 * SGD_DECAY_RATE.powf(step as f64 / SGD_DECAY_STEPS)
    }

    /// Applies one update. Layers whose gradient set is empty (frozen or
    /// parameter-free) are left untouched.
    pub fn step(&mut self, net: &mut Network, grads: &[Params]) -> Result<()> {
        let params = net.params_mut();
        if grads.len() != params.len() {
            return Err(NnError::invalid(format!(
                "{} gradient sets for {} layers",
                grads.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if !g.is_empty() && (g.weight.len() != p.weight.len() || g.bias.len() != p.bias.len()) {
                return Err(NnError::invalid(format!(
                    "gradient shape mismatch at layer {i}"
                )));
            }
        }
        match self.kind {
            OptimizerKind::SgdDecay { lr0 } => {
                let lr = Self::sgd_learning_rate(lr0, self.step);
                for (p, g) in params.iter_mut().zip(grads) {
                    if g.is_empty() {
                        continue;
                    }
                    for (w, d) in p
                        .weight
                        .iter_mut()
                        .zip(&g.weight)
                        .chain(p.bias.iter_mut().zip(&g.bias))
                    {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = params.iter().map(Params::zeros_like).collect();
                    self.v = params.iter().map(Params::zeros_like).collect();
                }
                let t = (self.step + 1) as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    if g.is_empty() {
                        continue;
                    }
                    adam_update(
                        &mut p.weight,
                        &g.weight,
                        &mut m.weight,
                        &mut v.weight,
                        c1,
                        c2,
                    );
                    adam_update(&mut p.bias, &g.bias, &mut m.bias, &mut v.bias, c1, c2);
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], c1: f64, c2: f64) {
    for i in 0..w.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        w[i] -= ADAM_ALPHA * mh / (vh.sqrt() + ADAM_EPS);
    }
}
