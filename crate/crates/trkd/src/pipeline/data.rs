//! Seeded synthetic class-clustered data (the stand-in for a real corpus).

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticDatasetConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidParameter {
                name: "num_classes",
                reason: format!("need at least 2, got {}", self.num_classes),
            });
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidParameter {
                name: "input_dim",
                reason: "must be positive".into(),
            });
        }
        if self.samples_per_class < 2 {
            return Err(Error::InvalidParameter {
                name: "samples_per_class",
                reason: format!(
                    "need at least 2 for a held-out split, got {}",
                    self.samples_per_class
                ),
            });
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "dataset",
                    reason: format!("{name} must be positive and finite, got {v}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub held_out: Dataset,
    pub num_classes: usize,
    pub input_dim: usize,
}

/// Draw class means from a seeded standard normal scaled by
/// `class_separation`, then samples as mean plus `noise_sigma`-scaled
/// noise. The held-out split takes the last fifth of each class (at least
/// one example), so splits are disjoint and stratified. Everything is
/// deterministic given the seed.
pub fn gen_dataset(cfg: &SyntheticDatasetConfig) -> Result<DatasetSplits> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let normal = StandardNormal;

    let mut train = Dataset::default();
    let mut held_out = Dataset::default();
    let held_per_class = (cfg.samples_per_class / 5).max(1);

    for class in 0..cfg.num_classes {
        let mean: Vec<f64> = (0..cfg.input_dim)
            .map(|_| cfg.class_separation * rng.sample::<f64, _>(normal))
            .collect();
        for sample in 0..cfg.samples_per_class {
            let x: Vec<f64> = mean
                .iter()
                .map(|&m| m + cfg.noise_sigma * rng.sample::<f64, _>(normal))
                .collect();
            let split = if sample < cfg.samples_per_class - held_per_class {
                &mut train
            } else {
                &mut held_out
            };
            split.inputs.push(x);
            split.labels.push(class);
        }
    }

    Ok(DatasetSplits {
        train,
        held_out,
        num_classes: cfg.num_classes,
        input_dim: cfg.input_dim,
    })
}
