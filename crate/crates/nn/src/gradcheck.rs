use std::collections::BTreeSet;

use rand::Rng;

use crate::error::{NnError, Result};
use crate::loss::Loss;
use crate::network::{Mode, Network};
use crate::reference;
use crate::tensor::Tensor;

pub const MIN_CHECKED: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Samples discarded because `w +/- h` crossed a ReLU or max-pool kink.
    pub rejected: usize,
    /// Analytic and numeric derivative at the worst sample.
    pub worst: (f64, f64),
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares backprop gradients against central differences on up to
/// `samples` randomly drawn trainable parameters (all of them if fewer).
///
/// Runs in eval mode, so dropout is the identity throughout. The perturbed
/// losses are evaluated in double-double precision so that rounding in the
/// forward pass does not dominate the difference quotient. A draw is
/// rejected when the perturbed forward passes take a different ReLU sign or
/// max-pool branch than the unperturbed one.
pub fn grad_check(
    net: &Network,
    loss: &Loss,
    x: &Tensor,
    target: &Tensor,
    h: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(NnError::invalid(format!("step {h} must be positive")));
    }
    let mut net = net.clone();
    let pred = net.forward(x, Mode::Eval)?;
    let (_, upstream) = loss.evaluate(&pred, target)?;
    let grads = net.backward(&upstream)?;

    let mut slots = Vec::new();
    for (i, p) in net.params().iter().enumerate().skip(net.frozen_prefix()) {
        if !p.is_empty() {
            slots.push((i, p.len()));
        }
    }
    let total: usize = slots.iter().map(|s| s.1).sum();
    if total == 0 {
        return Err(NnError::invalid("network has no trainable parameters"));
    }
    let locate = |mut flat: usize| {
        for &(i, len) in &slots {
            if flat < len {
                return (i, flat);
            }
            flat -= len;
        }
        unreachable!()
    };

    let base = reference::trace(&net, x);
    let base_kinks = base.kinks();
    let eval = |net: &Network, layer: usize| {
        let e = reference::forward_from(net, &base, layer);
        (reference::loss(loss, &e.output, target), e.kinks)
    };

    let mut rng = qubo_core::rng::stream(seed, 0);
    let want = samples.min(total);
    let mut tried = BTreeSet::new();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        rejected: 0,
        worst: (0.0, 0.0),
    };
    while report.checked < want && tried.len() < total {
        let flat = rng.gen_range(0..total);
        if !tried.insert(flat) {
            continue;
        }
        let (layer, k) = locate(flat);
        let w0 = net.params()[layer].get(k);
        let (wp, wm) = (w0 + h, w0 - h);
        *net.params_mut()[layer].get_mut(k) = wp;
        let (fp, kp) = eval(&net, layer);
        *net.params_mut()[layer].get_mut(k) = wm;
        let (fm, km) = eval(&net, layer);
        *net.params_mut()[layer].get_mut(k) = w0;
        if kp != base_kinks || km != base_kinks {
            report.rejected += 1;
            continue;
        }
        // Over the step actually taken after rounding `w0 +/- h`.
        let numeric = (fp - fm).to_f64() / (wp - wm);
        let analytic = grads[layer].get(k);
        let err = rel_error(analytic, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = (analytic, numeric);
        }
        report.checked += 1;
    }
    Ok(report)
}
