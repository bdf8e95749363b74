//! Numerically stable probability primitives: temperature scaling,
//! softmax/log-softmax, and KL divergence with explicit zero-mass
//! conventions.
//!
//! All math is natural-log and 64-bit. Log-probabilities come from a
//! max-shifted log-sum-exp, never from exponentiating and re-logging, so
//! they stay finite for any finite logits. Zero-mass conventions:
//! `0 * log(0 / x) = 0`, and a positive-mass term against a zero gives
//! `+inf` (a detectable divergent result, never NaN).

use crate::error::{Error, Result};

/// Raw class scores over `C >= 2` classes; entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "logits",
                reason: format!("need at least 2 classes, got {}", values.len()),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "logits",
                reason: format!("non-finite entry {bad}"),
            });
        }
        Ok(Self { values })
    }

    pub fn num_classes(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A probability distribution paired with its log, kept consistent by
/// construction: `probs[i] == exp(log_probs[i])` up to rounding, probs sum
/// to 1, and zero probability corresponds to `-inf` log.
#[derive(Debug, Clone)]
pub struct ProbVector {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ProbVector {
    /// Build from explicit probabilities (log-probs are `ln(p)`).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter {
                name: "probs",
                reason: "empty probability vector".into(),
            });
        }
        for &p in &probs {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter {
                    name: "probs",
                    reason: format!("entry {p} outside [0, 1]"),
                });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "probs",
                reason: format!("probabilities sum to {sum}, not 1"),
            });
        }
        let log_probs = probs.iter().map(|&p| p.ln()).collect();
        Ok(Self { probs, log_probs })
    }

    /// Internal constructor for values produced by paths that uphold the
    /// invariants themselves (softmax, conditionals, mass vectors).
    pub(crate) fn from_parts(probs: Vec<f64>, log_probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), log_probs.len());
        Self { probs, log_probs }
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }
}

/// Divide every logit by the temperature `t > 0`.
pub fn temperature_scale(z: &LogitVector, t: f64) -> Result<LogitVector> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "temperature",
            reason: format!("must be positive and finite, got {t}"),
        });
    }
    Ok(LogitVector {
        values: z.values.iter().map(|&v| v / t).collect(),
    })
}

/// Max-shifted log-sum-exp of a finite slice.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax with log-probs computed in log-space.
///
/// Finiteness of the input is the [`LogitVector`] invariant, so this is
/// total: the shift by the max logit makes overflow impossible.
pub fn softmax(z: &LogitVector) -> ProbVector {
    let lse = log_sum_exp(z.values());
    let log_probs: Vec<f64> = z.values().iter().map(|&v| v - lse).collect();
    let probs: Vec<f64> = log_probs.iter().map(|&lp| lp.exp()).collect();
    ProbVector::from_parts(probs, log_probs)
}

/// Forward KL divergence `sum_i p_i * (log p_i - log q_i)` in nats.
///
/// Terms with `p_i == 0` contribute zero. A term with `p_i > 0` and
/// `q_i == 0` makes the result `+inf`. The result is clamped at zero so
/// rounding never produces a small negative value.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::Shape(format!(
            "KL over distributions of different lengths: {} vs {}",
            p.num_classes(),
            q.num_classes()
        )));
    }
    let mut sum = 0.0;
    for i in 0..p.num_classes() {
        let pi = p.probs[i];
        if pi > 0.0 {
            sum += pi * (p.log_probs[i] - q.log_probs[i]);
        }
    }
    Ok(sum.max(0.0))
}
