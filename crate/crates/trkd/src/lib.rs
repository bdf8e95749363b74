//! Triage knowledge distillation.
//!
//! A teacher posterior is split into the target class, a high-probability
//! confusion-set, and a low-probability background-set under a
//! cumulative-probability cutoff. The library implements the resulting
//! objective family (classical KD, decoupled KD, and the triage variants)
//! with analytic gradients, the cutoff curriculum, a desk-scale
//! teacher-to-student training pipeline, and verification-style EER
//! evaluation.
//!
//! Everything is plain `f64` vector math; every loss returns its value
//! together with the gradient with respect to the student logits, and the
//! algebraic identities tying the decompositions back to the full KL
//! divergence are checkable at runtime (see [`check`] and the `selfcheck`
//! CLI command).

pub mod aux_losses;
pub mod check;
pub mod distill;
pub mod dump;
pub mod error;
pub mod eval;
pub mod partition;
pub mod pipeline;
pub mod prob;
pub mod schedule;

pub use error::{Error, Result};
