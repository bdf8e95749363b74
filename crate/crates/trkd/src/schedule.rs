//! The cutoff curriculum: clipped linear progress over a step window
//! driving an exponential decay of the cumulative-probability cutoff.

use crate::error::{Error, Result};

/// Curriculum parameters. The cutoff holds at `tau_init` before `k_start`,
/// decays along `tau_init + (tau_final - tau_init) * (1 - gamma^v(k))`
/// inside the window, and is exactly `tau_final` from `k_stop` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauScheduleConfig {
    tau_init: f64,
    tau_final: f64,
    gamma: f64,
    k_start: u64,
    k_stop: u64,
}

impl TauScheduleConfig {
    pub fn new(tau_init: f64, tau_final: f64, gamma: f64, k_start: u64, k_stop: u64) -> Result<Self> {
        if !(tau_init.is_finite() && tau_final.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "tau_schedule",
                reason: "non-finite parameter".into(),
            });
        }
        if !(0.0 < tau_final && tau_final <= tau_init && tau_init <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "tau_schedule",
                reason: format!(
                    "need 0 < tau_final <= tau_init <= 1, got tau_init={tau_init}, tau_final={tau_final}"
                ),
            });
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must lie in [0, 1], got {gamma}"),
            });
        }
        if k_start >= k_stop {
            return Err(Error::InvalidParameter {
                name: "tau_schedule",
                reason: format!("need k_start < k_stop, got {k_start} >= {k_stop}"),
            });
        }
        Ok(Self { tau_init, tau_final, gamma, k_start, k_stop })
    }

    /// A fixed cutoff: both endpoints pinned to `tau`, so every step yields
    /// `tau` regardless of the window.
    pub fn fixed(tau: f64) -> Result<Self> {
        Self::new(tau, tau, 0.001, 0, 1)
    }

    pub fn tau_init(&self) -> f64 {
        self.tau_init
    }

    pub fn tau_final(&self) -> f64 {
        self.tau_final
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn k_start(&self) -> u64 {
        self.k_start
    }

    pub fn k_stop(&self) -> u64 {
        self.k_stop
    }

    /// Clipped linear progress through the scheduling window.
    pub fn progress(&self, k: u64) -> f64 {
        let span = (self.k_stop - self.k_start) as f64;
        let raw = (k as f64 - self.k_start as f64) / span;
        raw.clamp(0.0, 1.0)
    }

    /// The in-window branch evaluated at progress `v`; exposed so the
    /// documented discontinuity at `k_stop` can be measured directly.
    pub fn scheduled_value(&self, v: f64) -> f64 {
        self.tau_init + (self.tau_final - self.tau_init) * (1.0 - self.gamma.powf(v))
    }

    /// Cutoff at training step `k`.
    pub fn tau_at(&self, k: u64) -> f64 {
        if k < self.k_start {
            self.tau_init
        } else if k < self.k_stop {
            self.scheduled_value(self.progress(k))
        } else {
            self.tau_final
        }
    }
}
