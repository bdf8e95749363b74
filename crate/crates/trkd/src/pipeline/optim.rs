//! Training configuration, the learning-rate schedule, and classic
//! SGD with momentum.

use std::fmt;
use std::str::FromStr;

use crate::distill::DistillWeights;
use crate::error::{Error, Result};
use crate::schedule::TauScheduleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillMethod {
    None,
    Kd,
    Dkd,
    Trkd,
    Mse,
    Cos,
}

impl DistillMethod {
    pub fn uses_teacher_logits(self) -> bool {
        matches!(self, Self::Kd | Self::Dkd | Self::Trkd)
    }

    pub fn uses_teacher_embedding(self) -> bool {
        matches!(self, Self::Mse | Self::Cos)
    }
}

impl fmt::Display for DistillMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::None => "none",
            Self::Kd => "kd",
            Self::Dkd => "dkd",
            Self::Trkd => "trkd",
            Self::Mse => "mse",
            Self::Cos => "cos",
        };
        f.write_str(name)
    }
}

impl FromStr for DistillMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "kd" => Ok(Self::Kd),
            "dkd" => Ok(Self::Dkd),
            "trkd" => Ok(Self::Trkd),
            "mse" => Ok(Self::Mse),
            "cos" => Ok(Self::Cos),
            other => Err(Error::InvalidParameter {
                name: "method",
                reason: format!(
                    "unknown method `{other}` (expected none|kd|dkd|trkd|mse|cos)"
                ),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub seed: u64,
    pub method: DistillMethod,
    pub distill_weights: DistillWeights,
    pub tau_schedule: TauScheduleConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "train",
                reason: "epochs and batch_size must be positive".into(),
            });
        }
        if !(self.lr_peak.is_finite() && self.lr_final.is_finite())
            || !(self.lr_peak > self.lr_final && self.lr_final > 0.0)
        {
            return Err(Error::InvalidParameter {
                name: "train",
                reason: format!(
                    "need lr_peak > lr_final > 0, got lr_peak={}, lr_final={}",
                    self.lr_peak, self.lr_final
                ),
            });
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidParameter {
                name: "warmup_epochs",
                reason: format!(
                    "must be below epochs, got {} >= {}",
                    self.warmup_epochs, self.epochs
                ),
            });
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter {
                name: "momentum",
                reason: format!("must lie in [0, 1), got {}", self.momentum),
            });
        }
        self.distill_weights.validate()?;
        Ok(())
    }

    /// Learning rate at step `k`: linear from 0 to `lr_peak` across the
    /// warmup steps, then exponential decay hitting `lr_final` exactly at
    /// the final step.
    pub fn lr_at(&self, steps_per_epoch: usize, k: u64) -> f64 {
        let warmup = (self.warmup_epochs * steps_per_epoch) as u64;
        let total = (self.epochs * steps_per_epoch) as u64;
        if warmup > 0 && k < warmup {
            return self.lr_peak * k as f64 / warmup as f64;
        }
        let last = total.saturating_sub(1);
        if last <= warmup {
            return self.lr_final;
        }
        let exponent = ((k - warmup) as f64 / (last - warmup) as f64).min(1.0);
        if exponent >= 1.0 {
            return self.lr_final;
        }
        self.lr_peak * (self.lr_final / self.lr_peak).powf(exponent)
    }
}

/// Classic momentum update: `v <- momentum * v + g; w <- w - lr * v`.
pub fn sgd_step(
    params: &mut [f64],
    velocity: &mut [f64],
    grads: &[f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != velocity.len() || params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "sgd buffers disagree: {} params, {} velocity, {} grads",
            params.len(),
            velocity.len(),
            grads.len()
        )));
    }
    for ((w, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
    Ok(())
}
