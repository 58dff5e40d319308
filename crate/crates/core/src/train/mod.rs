//! AdamW training with warm-up cosine decay and patience-based early
//! stopping on the training loss.

mod adamw;
mod checkpoint;
mod early_stop;
mod schedule;

pub use adamw::{adamw_step, OptState};
pub use checkpoint::Checkpoint;
pub use early_stop::EarlyStopping;
pub use schedule::{cosine_lr, warmup_cosine, ScheduleUnit};

use crate::data::{batch_indices, epoch_seed, Dataset};
use crate::error::{Error, Result};
use crate::model::MoeFusionModel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Warm-up length, in units of `schedule_unit`.
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Cross-entropy weights, indexed `[spoof, bonafide]`.
    pub class_weights: [f64; 2],
    pub schedule_unit: ScheduleUnit,
}

impl Default for TrainConfig {
    /// Frozen-encoder recipe: lr 1e-5, β = (0.9, 0.999), 3 warm-up epochs,
    /// 50 epochs, patience 3, batch size 4.
    fn default() -> Self {
        Self {
            lr_base: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_epochs: 3,
            max_epochs: 50,
            patience: 3,
            batch_size: 4,
            seed: 0,
            class_weights: [1.0, 1.0],
            schedule_unit: ScheduleUnit::Epoch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return fail(format!(
                "betas must lie in (0, 1), got ({}, {})",
                self.beta1, self.beta2
            ));
        }
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            return fail(format!(
                "learning rate must be positive, got {}",
                self.lr_base
            ));
        }
        if self.eps.is_nan()
            || self.eps <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return fail("eps must be positive and weight decay non-negative".into());
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return fail("patience, batch size and max epochs must be positive".into());
        }
        if self.schedule_unit == ScheduleUnit::Epoch && self.warmup_epochs >= self.max_epochs {
            return fail(format!(
                "warm-up ({}) must be shorter than max epochs ({})",
                self.warmup_epochs, self.max_epochs
            ));
        }
        if self
            .class_weights
            .iter()
            .any(|w| !(*w > 0.0 && w.is_finite()))
        {
            return fail(format!(
                "class weights must be positive, got {:?}",
                self.class_weights
            ));
        }
        Ok(())
    }

    fn lr(&self, epoch: usize, step_in_epoch: usize, steps_per_epoch: usize) -> f64 {
        match self.schedule_unit {
            ScheduleUnit::Epoch => {
                warmup_cosine(epoch, self.warmup_epochs, self.max_epochs, self.lr_base)
            }
            ScheduleUnit::Step => {
                let total = self.max_epochs * steps_per_epoch;
                let warmup = self.warmup_epochs.min(total - 1);
                warmup_cosine(
                    epoch * steps_per_epoch + step_in_epoch,
                    warmup,
                    total,
                    self.lr_base,
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 0-based.
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the lowest-loss epoch, with the full loss log.
    pub best: Checkpoint,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn loss_log(&self) -> &[f64] {
        &self.best.loss_log
    }

    pub fn best_loss(&self) -> f64 {
        self.best.loss_log[self.best.best_epoch]
    }
}

pub fn train(model: MoeFusionModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, dataset, cfg, |_| {})
}

/// Trains `model` on `dataset`, calling `on_epoch` after every epoch.
///
/// The dataset is only borrowed, so input features are never touched;
/// only the fusion and head parameters change.
pub fn train_with(
    mut model: MoeFusionModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mc = *model.config();
    if dataset.frames() != mc.frames || dataset.feature_dim() != mc.feature_dim {
        return Err(Error::Mismatch(format!(
            "model expects T={} S={}, dataset has T={} S={}",
            mc.frames,
            mc.feature_dim,
            dataset.frames(),
            dataset.feature_dim()
        )));
    }
    let mut state = OptState::new(model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut loss_log = Vec::new();
    let mut best_model = model.clone();
    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);

    for epoch in 0..cfg.max_epochs {
        let batches = batch_indices(dataset.len(), cfg.batch_size, epoch_seed(cfg.seed, epoch));
        let mut total = 0.0;
        let first_lr = cfg.lr(epoch, 0, steps_per_epoch);
        for (b, idx) in batches.iter().enumerate() {
            let batch = dataset.batch(idx)?;
            let labels = batch.require_labels()?;
            let (loss, grads) =
                model.loss_and_grads(&batch.features, &labels, cfg.class_weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            total += loss * idx.len() as f64;
            let lr = cfg.lr(epoch, b, steps_per_epoch);
            adamw_step(&mut model.params_mut(), &grads, &mut state, lr, cfg)?;
        }
        let loss = total / dataset.len() as f64;
        loss_log.push(loss);
        let improved = stopper.observe(epoch, loss);
        if improved {
            best_model = model.clone();
        }
        on_epoch(&EpochStats {
            epoch,
            loss,
            lr: first_lr,
            improved,
        });
        if stopper.should_stop() {
            break;
        }
    }

    let epochs_run = loss_log.len();
    let (best_epoch, _) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: Checkpoint {
            model: best_model,
            train_config: cfg.clone(),
            loss_log,
            best_epoch,
        },
        epochs_run,
        stopped_early: epochs_run < cfg.max_epochs,
    })
}
