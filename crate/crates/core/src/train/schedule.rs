use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};

/// Unit at which the learning rate schedule advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleUnit {
    /// One value per epoch; warm-up counts epochs.
    #[default]
    Epoch,
    /// One value per optimizer step; warm-up counts steps.
    Step,
}

impl ScheduleUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleUnit::Epoch => "epoch",
            ScheduleUnit::Step => "step",
        }
    }
}

impl std::str::FromStr for ScheduleUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "epoch" => Ok(Self::Epoch),
            "step" => Ok(Self::Step),
            other => Err(format!("unknown schedule unit {other:?} (epoch|step)")),
        }
    }
}

/// Linear warm-up to `base` over `warmup` positions, then half-cosine decay
/// over the remaining `total − warmup` positions.
pub fn warmup_cosine(position: usize, warmup: usize, total: usize, base: f64) -> f64 {
    if position < warmup {
        return base * (position + 1) as f64 / warmup as f64;
    }
    let progress = (position - warmup) as f64 / (total - warmup) as f64;
    base * 0.5 * (1.0 + (PI * progress).cos())
}

/// Learning rate of `epoch` (0-based) under the epoch-granular schedule.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.max_epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} outside 0..{}",
            cfg.max_epochs
        )));
    }
    Ok(warmup_cosine(
        epoch,
        cfg.warmup_epochs,
        cfg.max_epochs,
        cfg.lr_base,
    ))
}
