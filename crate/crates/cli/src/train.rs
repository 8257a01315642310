use qubo_core::data::{batches, Dataset, Split};
use qubo_core::rng::{split_mix, stream};
use qubo_nn::{Loss, Mode, Model, Optimizer, OptimizerKind, Tensor};

use crate::error::{CliError, Result};
use crate::evaluate::{assess, Assessment};
use crate::inputs::SplitTensors;

/// Stream indices derived from the run seed.
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub loss: Loss,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub default_acc: f64,
    pub after_eval_acc: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,default_acc,after_eval_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.val_loss, self.default_acc, self.after_eval_acc
        )
    }
}

pub struct TrainOutcome {
    pub last: Model,
    /// Model with the lowest validation loss seen.
    pub best: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Epoch callback: sees the stats, the model after the epoch, and the
/// validation assessment it came from.
pub type EpochHook<'a> = dyn FnMut(&EpochStats, &Model, &Assessment) -> Result<()> + 'a;

/// Trains autoencoders on reconstruction and solvers on labels. Shuffle
/// order, dropout masks and evaluation seeds all derive from `cfg.seed`.
pub fn train(
    model: Model,
    ds: &Dataset,
    cfg: &TrainConfig,
    on_epoch: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(CliError::Usage(
            "epochs and batch size must be positive".into(),
        ));
    }
    let train = SplitTensors::new(ds, Split::Train)?;
    let val = SplitTensors::new(ds, Split::Val)?;
    let reconstruct = model.arch.is_autoencoder();
    let mut model = model;
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut best: Option<(f64, usize, Model)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let shuffle_seed = split_mix(cfg.seed, SHUFFLE_STREAM);
    for epoch in 1..=cfg.epochs {
        let mut rng = stream(split_mix(cfg.seed, DROPOUT_STREAM), epoch as u64);
        let mut total = 0.0;
        for idx in batches(train.len(), cfg.batch_size, shuffle_seed, epoch as u64)? {
            let (x, y) = train.gather(&idx)?;
            let target = if reconstruct { x.clone() } else { y };
            let out = model.net.forward(&x, Mode::Train(&mut rng))?;
            let (loss, grad) = if reconstruct {
                cfg.loss.evaluate(&out, &target)?
            } else {
                let flat = Tensor::new(vec![out.batch(), out.sample_len()], out.into_data())?;
                cfg.loss.evaluate(&flat, &target)?
            };
            if !loss.is_finite() {
                return Err(CliError::Runtime(format!(
                    "non-finite training loss {loss} in epoch {epoch} (optimizer step {})",
                    opt.steps()
                )));
            }
            let grad = Tensor::new(
                std::iter::once(grad.batch())
                    .chain(model.net.output_shape().iter().copied())
                    .collect(),
                grad.into_data(),
            )?;
            let grads = model.net.backward(&grad)?;
            opt.step(&mut model.net, &grads)?;
            total += loss * idx.len() as f64;
        }
        model.net.clear_cache();
        let assessment = assess(
            &model,
            ds,
            &val,
            &cfg.loss,
            split_mix(cfg.seed, EVAL_STREAM),
        )?;
        let stats = EpochStats {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: assessment.loss,
            default_acc: assessment.report.default_accuracy(),
            after_eval_acc: assessment.report.after_eval_accuracy(),
        };
        if !stats.val_loss.is_finite() {
            return Err(CliError::Runtime(format!(
                "non-finite validation loss in epoch {epoch}"
            )));
        }
        if best.as_ref().is_none_or(|(v, ..)| stats.val_loss < *v) {
            best = Some((stats.val_loss, epoch, model.clone()));
        }
        on_epoch(&stats, &model, &assessment)?;
        history.push(stats);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        last: model,
        best,
        best_epoch,
        history,
    })
}
