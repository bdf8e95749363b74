//! Plain-text run configuration: TOML sections mapped onto the library's
//! validated types, with field-level error messages naming the offending
//! key. Command-line flags override file values.

use std::path::Path;

use serde::Deserialize;
use trkd::distill::DistillWeights;
use trkd::pipeline::{DistillMethod, MlpSpec, SyntheticDatasetConfig, TrainConfig};
use trkd::schedule::TauScheduleConfig;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub teacher: ModelSection,
    pub student: ModelSection,
    pub aam: AamSection,
    pub train: TrainSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AamSection {
    pub scale: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub method: String,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_m: f64,
    pub lambda_f: f64,
    pub temperature: f64,
    pub rescale_t_squared: bool,
}

impl Default for DistillSection {
    fn default() -> Self {
        let w = DistillWeights::default();
        Self {
            method: "trkd".into(),
            alpha: w.alpha,
            beta: w.beta,
            lambda_m: w.lambda_m,
            lambda_f: w.lambda_f,
            temperature: w.temperature,
            rescale_t_squared: w.rescale_t_squared,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub tau_init: f64,
    pub tau_final: f64,
    pub gamma: f64,
    /// Window bounds in epochs; converted to steps once the dataset size
    /// (and so the steps-per-epoch count) is known.
    pub start_epoch: usize,
    pub stop_epoch: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { tau_init: 1.0, tau_final: 0.05, gamma: 0.001, start_epoch: 2, stop_epoch: 12 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub pairs_per_class: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { pairs_per_class: 50, seed: 97 }
    }
}

fn config_err(key: &str, err: impl std::fmt::Display) -> CliError {
    CliError::config(format!("config field `{key}`: {err}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("config parse error: {e}")))
    }

    pub fn dataset_config(&self) -> Result<SyntheticDatasetConfig, CliError> {
        let d = &self.dataset;
        let cfg = SyntheticDatasetConfig {
            num_classes: d.num_classes,
            input_dim: d.input_dim,
            samples_per_class: d.samples_per_class,
            class_separation: d.class_separation,
            noise_sigma: d.noise_sigma,
            seed: d.seed,
        };
        cfg.validate().map_err(|e| config_err("dataset", e))?;
        Ok(cfg)
    }

    fn model_spec(&self, section: &ModelSection, key: &str) -> Result<MlpSpec, CliError> {
        if section.hidden.is_empty() {
            return Err(config_err(
                &format!("{key}.hidden"),
                "need at least one hidden layer",
            ));
        }
        let mut widths = vec![self.dataset.input_dim];
        widths.extend_from_slice(&section.hidden);
        widths.push(section.embedding_dim);
        MlpSpec::new(widths).map_err(|e| config_err(key, e))
    }

    pub fn teacher_spec(&self) -> Result<MlpSpec, CliError> {
        self.model_spec(&self.teacher, "teacher")
    }

    pub fn student_spec(&self) -> Result<MlpSpec, CliError> {
        self.model_spec(&self.student, "student")
    }

    pub fn distill_weights(&self) -> DistillWeights {
        DistillWeights {
            alpha: self.distill.alpha,
            beta: self.distill.beta,
            lambda_m: self.distill.lambda_m,
            lambda_f: self.distill.lambda_f,
            temperature: self.distill.temperature,
            rescale_t_squared: self.distill.rescale_t_squared,
        }
    }

    pub fn method(&self, override_method: Option<&str>) -> Result<DistillMethod, CliError> {
        let name = override_method.unwrap_or(&self.distill.method);
        name.parse().map_err(|e| config_err("distill.method", e))
    }

    /// Steps per epoch for the train split under the configured batch size.
    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.train.batch_size)
    }

    pub fn tau_schedule(&self, steps_per_epoch: usize, fixed: Option<f64>) -> Result<TauScheduleConfig, CliError> {
        if let Some(tau) = fixed {
            return TauScheduleConfig::fixed(tau).map_err(|e| config_err("tau-fixed", e));
        }
        let s = &self.schedule;
        if s.start_epoch >= s.stop_epoch {
            return Err(config_err(
                "schedule.start_epoch",
                format!("must be below schedule.stop_epoch, got {} >= {}", s.start_epoch, s.stop_epoch),
            ));
        }
        TauScheduleConfig::new(
            s.tau_init,
            s.tau_final,
            s.gamma,
            (s.start_epoch * steps_per_epoch) as u64,
            (s.stop_epoch * steps_per_epoch) as u64,
        )
        .map_err(|e| config_err("schedule", e))
    }

    pub fn train_config(
        &self,
        method: DistillMethod,
        steps_per_epoch: usize,
        tau_fixed: Option<f64>,
        seed_override: Option<u64>,
        epochs_override: Option<usize>,
    ) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let cfg = TrainConfig {
            epochs: epochs_override.unwrap_or(t.epochs),
            batch_size: t.batch_size,
            lr_peak: t.lr_peak,
            lr_final: t.lr_final,
            warmup_epochs: t.warmup_epochs,
            momentum: t.momentum,
            seed: seed_override.unwrap_or(t.seed),
            method,
            distill_weights: self.distill_weights(),
            tau_schedule: self.tau_schedule(steps_per_epoch, tau_fixed)?,
        };
        cfg.validate().map_err(|e| config_err("train", e))?;
        Ok(cfg)
    }

    pub fn aam_hyper(&self) -> Result<trkd::pipeline::AamHyper, CliError> {
        if !(self.aam.scale.is_finite() && self.aam.scale > 0.0) {
            return Err(config_err("aam.scale", "must be positive and finite"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.aam.margin) {
            return Err(config_err("aam.margin", "must lie in [0, pi/2)"));
        }
        Ok(trkd::pipeline::AamHyper { scale: self.aam.scale, margin: self.aam.margin })
    }
}
