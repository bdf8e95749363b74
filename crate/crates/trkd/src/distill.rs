//! Logit-level distillation objectives with analytic gradients with
//! respect to the student logits.
//!
//! Every loss here is a forward KL (teacher against student) or a weighted
//! sum of such terms. The temperature divides both logit vectors before the
//! softmax, and values and gradients are rescaled by T^2 (switchable) so
//! gradient magnitude stays temperature-independent.
//!
//! Internally there are three kernels, each returning the loss together
//! with its gradient against the *temperature-scaled* student logits:
//!
//! - full KL over all classes,
//! - grouped KL over aggregated masses (target/rest, or
//!   target/confusion/background),
//! - within-set conditional KL over a subset of classes.
//!
//! All mass accumulations iterate classes in ascending index order. That
//! makes the decoupled loss and the triage loss at cutoff 1 agree
//! bit-for-bit, not merely to rounding.

use crate::error::{Error, Result};
use crate::partition::{self, Group, TriagePartition};
use crate::prob::{self, LogitVector, ProbVector};

/// Weights and temperature shared by the distillation objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillWeights {
    /// Weight of the target/rest term in the decoupled loss.
    pub alpha: f64,
    /// Weight of the non-target conditional term in the decoupled loss.
    pub beta: f64,
    /// Weight of the three-mass term in the triage loss.
    pub lambda_m: f64,
    /// Weight of the confusion-set conditional term in the triage loss.
    pub lambda_f: f64,
    /// Softmax temperature applied to both logit vectors.
    pub temperature: f64,
    /// Multiply values and gradients by T^2. On by default; disable to
    /// inspect the raw KL scale.
    pub rescale_t_squared: bool,
}

impl Default for DistillWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 8.0,
            lambda_m: 1.0,
            lambda_f: 8.0,
            temperature: 4.0,
            rescale_t_squared: true,
        }
    }
}

impl DistillWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_m", self.lambda_m),
            ("lambda_f", self.lambda_f),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "distill_weights",
                    reason: format!("{name} must be finite and >= 0, got {v}"),
                });
            }
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "temperature",
                reason: format!("must be positive and finite, got {}", self.temperature),
            });
        }
        Ok(())
    }
}

/// A scalar loss (nats) and its gradient with respect to the raw student
/// logits. Every objective here is shift-invariant in the student logits,
/// so the gradient entries sum to zero.
#[derive(Debug, Clone)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad_student_logits: Vec<f64>,
}

impl LossValueGrad {
    fn zero(num_classes: usize) -> Self {
        Self { value: 0.0, grad_student_logits: vec![0.0; num_classes] }
    }
}

/// Temperature-scaled teacher/student posteriors plus the output scaling.
struct Prepared {
    pt: ProbVector,
    ps: ProbVector,
    temperature: f64,
    scale: f64,
}

impl Prepared {
    fn finish(&self, value: f64, grad_scaled_logits: Vec<f64>) -> LossValueGrad {
        // Chain rule through z = s / T contributes 1/T on top of the
        // (optional) T^2 rescale.
        let k = self.scale / self.temperature;
        LossValueGrad {
            value: (self.scale * value).max(0.0),
            grad_student_logits: grad_scaled_logits.into_iter().map(|g| k * g).collect(),
        }
    }
}

fn prepare(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    weights: &DistillWeights,
) -> Result<Prepared> {
    weights.validate()?;
    if teacher_logits.num_classes() != student_logits.num_classes() {
        return Err(Error::Shape(format!(
            "teacher has {} classes but student has {}",
            teacher_logits.num_classes(),
            student_logits.num_classes()
        )));
    }
    let t = weights.temperature;
    let pt = prob::softmax(&prob::temperature_scale(teacher_logits, t)?);
    let ps = prob::softmax(&prob::temperature_scale(student_logits, t)?);
    let scale = if weights.rescale_t_squared { t * t } else { 1.0 };
    Ok(Prepared { pt, ps, temperature: t, scale })
}

/// Full KL and its gradient against the scaled student logits.
fn full_kl(pt: &ProbVector, ps: &ProbVector) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    for i in 0..pt.num_classes() {
        let pi = pt.probs()[i];
        if pi > 0.0 {
            value += pi * (pt.log_probs()[i] - ps.log_probs()[i]);
        }
    }
    let grad = ps
        .probs()
        .iter()
        .zip(pt.probs())
        .map(|(&s, &t)| s - t)
        .collect();
    (value, grad)
}

/// KL between aggregated group masses. `group_of[i]` assigns class `i` to
/// one of `n_groups` groups covering all classes.
fn grouped_kl(pt: &ProbVector, ps: &ProbVector, group_of: &[usize], n_groups: usize) -> (f64, Vec<f64>) {
    let mut pm = vec![0.0; n_groups];
    let mut qm = vec![0.0; n_groups];
    for i in 0..pt.num_classes() {
        pm[group_of[i]] += pt.probs()[i];
        qm[group_of[i]] += ps.probs()[i];
    }
    let mut value = 0.0;
    let mut sum_p = 0.0;
    let mut ratio = vec![0.0; n_groups];
    for g in 0..n_groups {
        sum_p += pm[g];
        if pm[g] > 0.0 {
            value += pm[g] * (pm[g].ln() - qm[g].ln());
        }
        // qm == 0 forces ps == 0 on the whole group, so the gradient factor
        // below is multiplied by zero; park the ratio at 0 to avoid NaN.
        ratio[g] = if qm[g] > 0.0 { pm[g] / qm[g] } else { 0.0 };
    }
    let grad = (0..pt.num_classes())
        .map(|i| ps.probs()[i] * (sum_p - ratio[group_of[i]]))
        .collect();
    (value, grad)
}

/// KL between within-set conditionals over the classes with `in_set[i]`.
fn conditional_kl(pt: &ProbVector, ps: &ProbVector, in_set: &[bool]) -> Result<(f64, Vec<f64>)> {
    let c = pt.num_classes();
    let mut p_mass = 0.0;
    let mut q_mass = 0.0;
    for i in 0..c {
        if in_set[i] {
            p_mass += pt.probs()[i];
            q_mass += ps.probs()[i];
        }
    }
    if p_mass < 1e-300 {
        return Err(Error::DegenerateMass(
            "teacher mass of the conditioning set is zero".into(),
        ));
    }
    if q_mass <= 0.0 {
        // Unreachable from finite logits; reported as a divergent value.
        return Ok((f64::INFINITY, vec![0.0; c]));
    }
    let (log_p_mass, log_q_mass) = (p_mass.ln(), q_mass.ln());
    let mut value = 0.0;
    for i in 0..c {
        if in_set[i] && pt.probs()[i] > 0.0 {
            let lt = pt.log_probs()[i] - log_p_mass;
            let ls = ps.log_probs()[i] - log_q_mass;
            value += (pt.probs()[i] / p_mass) * (lt - ls);
        }
    }
    let grad = (0..c)
        .map(|i| {
            if in_set[i] {
                ps.probs()[i] / q_mass - pt.probs()[i] / p_mass
            } else {
                0.0
            }
        })
        .collect();
    Ok((value, grad))
}

fn target_rest_groups(c: usize, y: usize) -> Vec<usize> {
    (0..c).map(|i| usize::from(i != y)).collect()
}

fn non_target_mask(c: usize, y: usize) -> Vec<bool> {
    (0..c).map(|i| i != y).collect()
}

fn check_target(c: usize, y: usize) -> Result<()> {
    if y >= c {
        return Err(Error::IndexOutOfRange { index: y, classes: c });
    }
    Ok(())
}

fn check_partition(c: usize, part: &TriagePartition) -> Result<()> {
    if part.num_classes() != c {
        return Err(Error::Shape(format!(
            "partition covers {} classes but logits have {}",
            part.num_classes(),
            c
        )));
    }
    Ok(())
}

/// Group ids for a triage partition: target 0, confusion 1, background 2.
fn triage_groups(part: &TriagePartition) -> (Vec<usize>, usize) {
    let n_groups = if part.is_background_empty() { 2 } else { 3 };
    let ids = part
        .group_assignments()
        .iter()
        .map(|g| match g {
            Group::Target => 0,
            Group::Confusion => 1,
            Group::Background => 2,
        })
        .collect();
    (ids, n_groups)
}

fn confusion_mask(part: &TriagePartition) -> Vec<bool> {
    part.group_assignments()
        .iter()
        .map(|g| *g == Group::Confusion)
        .collect()
}

fn background_mask(part: &TriagePartition) -> Vec<bool> {
    part.group_assignments()
        .iter()
        .map(|g| *g == Group::Background)
        .collect()
}

/// Classical distillation: full KL between temperature-scaled posteriors.
pub fn kd_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    weights: &DistillWeights,
) -> Result<LossValueGrad> {
    let pr = prepare(teacher_logits, student_logits, weights)?;
    let (value, grad) = full_kl(&pr.pt, &pr.ps);
    Ok(pr.finish(value, grad))
}

/// Binary KL between the target mass and the pooled non-target mass.
pub fn tckd_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    y: usize,
    weights: &DistillWeights,
) -> Result<LossValueGrad> {
    let pr = prepare(teacher_logits, student_logits, weights)?;
    check_target(pr.pt.num_classes(), y)?;
    let groups = target_rest_groups(pr.pt.num_classes(), y);
    let (value, grad) = grouped_kl(&pr.pt, &pr.ps, &groups, 2);
    Ok(pr.finish(value, grad))
}

/// KL between the renormalized non-target distributions, without the
/// non-target-mass prefactor.
pub fn nckd_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    y: usize,
    weights: &DistillWeights,
) -> Result<LossValueGrad> {
    let pr = prepare(teacher_logits, student_logits, weights)?;
    check_target(pr.pt.num_classes(), y)?;
    let mask = non_target_mask(pr.pt.num_classes(), y);
    let (value, grad) = conditional_kl(&pr.pt, &pr.ps, &mask)?;
    Ok(pr.finish(value, grad))
}

/// Decoupled loss: `alpha * TCKD + beta * NCKD`.
pub fn dkd_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    y: usize,
    weights: &DistillWeights,
) -> Result<LossValueGrad> {
    let pr = prepare(teacher_logits, student_logits, weights)?;
    let c = pr.pt.num_classes();
    check_target(c, y)?;
    let groups = target_rest_groups(c, y);
    let (v_target, g_target) = grouped_kl(&pr.pt, &pr.ps, &groups, 2);
    let mask = non_target_mask(c, y);
    let (v_cond, g_cond) = conditional_kl(&pr.pt, &pr.ps, &mask)?;
    let value = weights.alpha * v_target + weights.beta * v_cond;
    let grad = g_target
        .iter()
        .zip(&g_cond)
        .map(|(a, b)| weights.alpha * a + weights.beta * b)
        .collect();
    Ok(pr.finish(value, grad))
}

/// KL between the aggregated target/confusion/background masses. With an
/// empty background-set this is exactly the binary target/rest term.
pub fn tmkd_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    part: &TriagePartition,
    weights: &DistillWeights,
) -> Result<LossValueGrad> {
    let pr = prepare(teacher_logits, student_logits, weights)?;
    check_partition(pr.pt.num_classes(), part)?;
    let (groups, n_groups) = triage_groups(part);
    let (value, grad) = grouped_kl(&pr.pt, &pr.ps, &groups, n_groups);
    Ok(pr.finish(value, grad))
}

/// KL between within-confusion-set conditionals, without the
/// confusion-mass prefactor.
pub fn cfkd_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    part: &TriagePartition,
    weights: &DistillWeights,
) -> Result<LossValueGrad> {
    let pr = prepare(teacher_logits, student_logits, weights)?;
    check_partition(pr.pt.num_classes(), part)?;
    if part.confusion_set().is_empty() {
        return Err(Error::EmptySet("confusion-set is empty"));
    }
    let mask = confusion_mask(part);
    let (value, grad) = conditional_kl(&pr.pt, &pr.ps, &mask)?;
    Ok(pr.finish(value, grad))
}

/// KL between within-background-set conditionals. An empty background-set
/// (or one the teacher gives zero mass) is the defined zero case.
pub fn bgkd_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    part: &TriagePartition,
    weights: &DistillWeights,
) -> Result<LossValueGrad> {
    let pr = prepare(teacher_logits, student_logits, weights)?;
    check_partition(pr.pt.num_classes(), part)?;
    if part.is_background_empty() || part.teacher_mass_background() < 1e-300 {
        return Ok(LossValueGrad::zero(pr.pt.num_classes()));
    }
    let mask = background_mask(part);
    let (value, grad) = conditional_kl(&pr.pt, &pr.ps, &mask)?;
    Ok(pr.finish(value, grad))
}

/// Triage loss: builds the partition from the temperature-scaled teacher
/// posterior at cutoff `tau` and returns
/// `lambda_m * TMKD + lambda_f * CFKD` (the background term is discarded).
pub fn trkd_loss(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    y: usize,
    tau: f64,
    weights: &DistillWeights,
) -> Result<LossValueGrad> {
    let pr = prepare(teacher_logits, student_logits, weights)?;
    let part = partition::build_partition(&pr.pt, y, tau)?;
    let (groups, n_groups) = triage_groups(&part);
    let (v_mass, g_mass) = grouped_kl(&pr.pt, &pr.ps, &groups, n_groups);
    let mask = confusion_mask(&part);
    let (v_cond, g_cond) = conditional_kl(&pr.pt, &pr.ps, &mask)?;
    let value = weights.lambda_m * v_mass + weights.lambda_f * v_cond;
    let grad = g_mass
        .iter()
        .zip(&g_cond)
        .map(|(a, b)| weights.lambda_m * a + weights.lambda_f * b)
        .collect();
    Ok(pr.finish(value, grad))
}

/// Residual of the exact two-level decomposition
/// `KL = TMKD + p_F * CFKD + p_B * BGKD`, evaluated on the plain softmax
/// of the given logits (no temperature, no rescale) with the
/// sample-dependent prefactors retained. At `tau = 1` this is the
/// target/non-target decomposition residual.
pub fn kd_decomposition_check(
    teacher_logits: &LogitVector,
    student_logits: &LogitVector,
    y: usize,
    tau: f64,
) -> Result<f64> {
    if teacher_logits.num_classes() != student_logits.num_classes() {
        return Err(Error::Shape(format!(
            "teacher has {} classes but student has {}",
            teacher_logits.num_classes(),
            student_logits.num_classes()
        )));
    }
    let pt = prob::softmax(teacher_logits);
    let ps = prob::softmax(student_logits);
    let part = partition::build_partition(&pt, y, tau)?;

    let (kl, _) = full_kl(&pt, &ps);
    let (groups, n_groups) = triage_groups(&part);
    let (three_mass, _) = grouped_kl(&pt, &ps, &groups, n_groups);
    let (confusion_cond, _) = conditional_kl(&pt, &ps, &confusion_mask(&part))?;
    let background_cond = if part.is_background_empty() || part.teacher_mass_background() < 1e-300 {
        0.0
    } else {
        conditional_kl(&pt, &ps, &background_mask(&part))?.0
    };

    let recomposed = three_mass
        + part.teacher_mass_confusion() * confusion_cond
        + part.teacher_mass_background() * background_cond;
    Ok((kl - recomposed).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn t1() -> DistillWeights {
        DistillWeights { temperature: 1.0, ..Default::default() }
    }

    fn random_logits(rng: &mut ChaCha20Rng, c: usize) -> LogitVector {
        LogitVector::new((0..c).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap()
    }

    #[test]
    fn kd_zero_on_identical_logits() {
        let z = logits(&[0.5, -1.0, 2.0]);
        let out = kd_loss(&z, &z, &DistillWeights::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_student_logits.iter().all(|&g| g.abs() < 1e-15));
    }

    #[test]
    fn kd_matches_kl_oracle_at_t1() {
        // Teacher p = [0.5, 0.5], student p = [0.25, 0.75] via logits
        // ln(p) (softmax of ln p recovers p exactly up to rounding).
        let teacher = logits(&[0.5f64.ln(), 0.5f64.ln()]);
        let student = logits(&[0.25f64.ln(), 0.75f64.ln()]);
        let out = kd_loss(&teacher, &student, &t1()).unwrap();
        assert!((out.value - 0.14384103622589042).abs() < 1e-5);
    }

    #[test]
    fn kd_grad_is_t_times_prob_gap() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let teacher = random_logits(&mut rng, 6);
        let student = random_logits(&mut rng, 6);
        let w = DistillWeights::default(); // T = 4, rescale on
        let out = kd_loss(&teacher, &student, &w).unwrap();
        let pt = prob::softmax(&prob::temperature_scale(&teacher, 4.0).unwrap());
        let ps = prob::softmax(&prob::temperature_scale(&student, 4.0).unwrap());
        for i in 0..6 {
            let expect = 4.0 * (ps.probs()[i] - pt.probs()[i]);
            assert!((out.grad_student_logits[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn tckd_matches_binary_kl_oracle() {
        // Teacher target mass 0.9, student target mass 0.5 at T = 1.
        let teacher = logits(&[0.9f64.ln(), 0.05f64.ln(), 0.05f64.ln()]);
        let student = logits(&[0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()]);
        let out = tckd_loss(&teacher, &student, 0, &t1()).unwrap();
        // Oracle: 0.9*ln(1.8) + 0.1*ln(0.2).
        assert!((out.value - 0.3680642071684971).abs() < 1e-5);
    }

    #[test]
    fn nckd_matches_conditional_composition() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..50 {
            let c = rng.gen_range(3..12);
            let teacher = random_logits(&mut rng, c);
            let student = random_logits(&mut rng, c);
            let y = rng.gen_range(0..c);
            let out = nckd_loss(&teacher, &student, y, &t1()).unwrap();
            // Oracle: compose softmax + conditional_over_set + kl_divergence.
            let pt = prob::softmax(&teacher);
            let ps = prob::softmax(&student);
            let set: Vec<usize> = (0..c).filter(|&i| i != y).collect();
            let ct = partition::conditional_over_set(&pt, &set).unwrap();
            let cs = partition::conditional_over_set(&ps, &set).unwrap();
            let oracle = prob::kl_divergence(&ct, &cs).unwrap();
            assert!((out.value - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn dkd_is_weighted_sum_of_components() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let w = DistillWeights { alpha: 1.0, beta: 8.0, ..Default::default() };
        for _ in 0..50 {
            let c = rng.gen_range(3..20);
            let teacher = random_logits(&mut rng, c);
            let student = random_logits(&mut rng, c);
            let y = rng.gen_range(0..c);
            let combined = dkd_loss(&teacher, &student, y, &w).unwrap();
            let a = tckd_loss(&teacher, &student, y, &w).unwrap();
            let b = nckd_loss(&teacher, &student, y, &w).unwrap();
            assert!((combined.value - (w.alpha * a.value + w.beta * b.value)).abs() < 1e-12);
            for i in 0..c {
                let expect = w.alpha * a.grad_student_logits[i] + w.beta * b.grad_student_logits[i];
                assert!((combined.grad_student_logits[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dkd_zero_weights_zero_loss() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let teacher = random_logits(&mut rng, 7);
        let student = random_logits(&mut rng, 7);
        let w = DistillWeights { alpha: 0.0, beta: 0.0, ..Default::default() };
        let out = dkd_loss(&teacher, &student, 2, &w).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_student_logits.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn tmkd_matches_three_term_kl_oracle() {
        // Teacher masses (0.6, 0.3, 0.1), student masses (0.4, 0.4, 0.2)
        // realized as 5-class distributions partitioned at tau = 0.25.
        let teacher = logits(&[
            0.6f64.ln(),
            0.2f64.ln(),
            0.1f64.ln(),
            0.06f64.ln(),
            0.04f64.ln(),
        ]);
        let student = logits(&[
            0.4f64.ln(),
            0.3f64.ln(),
            0.1f64.ln(),
            0.1f64.ln(),
            0.1f64.ln(),
        ]);
        let pt = prob::softmax(&teacher);
        let part = partition::build_partition(&pt, 0, 0.25).unwrap();
        let out = tmkd_loss(&teacher, &student, &part, &t1()).unwrap();
        // Oracle: 0.6*ln(1.5) + 0.3*ln(0.75) + 0.1*ln(0.5).
        assert!((out.value - 0.08765972507336982).abs() < 1e-5);
    }

    #[test]
    fn tmkd_reduces_to_tckd_with_empty_background() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..30 {
            let c = rng.gen_range(3..30);
            let teacher = random_logits(&mut rng, c);
            let student = random_logits(&mut rng, c);
            let y = rng.gen_range(0..c);
            let pt = prob::softmax(&prob::temperature_scale(&teacher, 4.0).unwrap());
            let part = partition::build_partition(&pt, y, 1.0).unwrap();
            let w = DistillWeights::default();
            let a = tmkd_loss(&teacher, &student, &part, &w).unwrap();
            let b = tckd_loss(&teacher, &student, y, &w).unwrap();
            assert!((a.value - b.value).abs() < 1e-12);
            for i in 0..c {
                assert!((a.grad_student_logits[i] - b.grad_student_logits[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cfkd_reduces_to_nckd_at_tau_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..30 {
            let c = rng.gen_range(3..30);
            let teacher = random_logits(&mut rng, c);
            let student = random_logits(&mut rng, c);
            let y = rng.gen_range(0..c);
            let pt = prob::softmax(&prob::temperature_scale(&teacher, 4.0).unwrap());
            let part = partition::build_partition(&pt, y, 1.0).unwrap();
            let w = DistillWeights::default();
            let a = cfkd_loss(&teacher, &student, &part, &w).unwrap();
            let b = nckd_loss(&teacher, &student, y, &w).unwrap();
            assert_eq!(a.value, b.value);
            assert_eq!(a.grad_student_logits, b.grad_student_logits);
        }
    }

    #[test]
    fn bgkd_zero_on_empty_background() {
        let teacher = logits(&[2.0, 1.0, 0.0]);
        let student = logits(&[1.0, 1.0, 1.0]);
        let pt = prob::softmax(&prob::temperature_scale(&teacher, 4.0).unwrap());
        let part = partition::build_partition(&pt, 0, 1.0).unwrap();
        let out = bgkd_loss(&teacher, &student, &part, &DistillWeights::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_student_logits.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bgkd_matches_two_term_oracle() {
        // Background conditionals: teacher [0.6, 0.4], student [0.5, 0.5].
        let teacher = logits(&[
            0.6f64.ln(),
            0.2f64.ln(),
            0.1f64.ln(),
            0.06f64.ln(),
            0.04f64.ln(),
        ]);
        let student = logits(&[
            0.4f64.ln(),
            0.2f64.ln(),
            0.2f64.ln(),
            0.1f64.ln(),
            0.1f64.ln(),
        ]);
        let pt = prob::softmax(&teacher);
        let part = partition::build_partition(&pt, 0, 0.25).unwrap();
        assert_eq!(part.background_set(), &[3, 4]);
        let out = bgkd_loss(&teacher, &student, &part, &t1()).unwrap();
        // Oracle: 0.6*ln(1.2) + 0.4*ln(0.8).
        assert!((out.value - 0.020135513550688863).abs() < 1e-5);
    }

    #[test]
    fn trkd_equals_dkd_at_tau_one_bitwise() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let w = DistillWeights::default(); // lambda_m = alpha, lambda_f = beta
        for _ in 0..100 {
            let c = rng.gen_range(3..50);
            let teacher = random_logits(&mut rng, c);
            let student = random_logits(&mut rng, c);
            let y = rng.gen_range(0..c);
            let a = trkd_loss(&teacher, &student, y, 1.0, &w).unwrap();
            let b = dkd_loss(&teacher, &student, y, &w).unwrap();
            assert_eq!(a.value, b.value);
            assert_eq!(a.grad_student_logits, b.grad_student_logits);
        }
    }

    #[test]
    fn trkd_zero_on_identical_logits() {
        let z = logits(&[0.5, -1.0, 2.0, 0.1]);
        let out = trkd_loss(&z, &z, 1, 0.3, &DistillWeights::default()).unwrap();
        assert!(out.value <= 1e-12);
        assert!(out.grad_student_logits.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn decomposition_residual_tiny() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..100 {
            let c = rng.gen_range(3..60);
            let teacher = random_logits(&mut rng, c);
            let student = random_logits(&mut rng, c);
            let y = rng.gen_range(0..c);
            let tau = 1.0 - rng.gen::<f64>();
            let res = kd_decomposition_check(&teacher, &student, y, tau).unwrap();
            assert!(res <= 1e-10, "residual {res} at c={c}, tau={tau}");
        }
    }

    #[test]
    fn decomposition_residual_at_tau_one_and_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let teacher = random_logits(&mut rng, 50);
        let student = random_logits(&mut rng, 50);
        assert!(kd_decomposition_check(&teacher, &student, 3, 1.0).unwrap() <= 1e-10);
        assert_eq!(kd_decomposition_check(&teacher, &teacher, 3, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn gradients_sum_to_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let w = DistillWeights::default();
        for _ in 0..20 {
            let c = rng.gen_range(3..40);
            let teacher = random_logits(&mut rng, c);
            let student = random_logits(&mut rng, c);
            let y = rng.gen_range(0..c);
            let tau = 1.0 - rng.gen::<f64>();
            let pt = prob::softmax(&prob::temperature_scale(&teacher, w.temperature).unwrap());
            let part = partition::build_partition(&pt, y, tau).unwrap();
            for out in [
                kd_loss(&teacher, &student, &w).unwrap(),
                tckd_loss(&teacher, &student, y, &w).unwrap(),
                nckd_loss(&teacher, &student, y, &w).unwrap(),
                dkd_loss(&teacher, &student, y, &w).unwrap(),
                tmkd_loss(&teacher, &student, &part, &w).unwrap(),
                cfkd_loss(&teacher, &student, &part, &w).unwrap(),
                bgkd_loss(&teacher, &student, &part, &w).unwrap(),
                trkd_loss(&teacher, &student, y, tau, &w).unwrap(),
            ] {
                let s: f64 = out.grad_student_logits.iter().sum();
                assert!(s.abs() <= 1e-9, "gradient sum {s}");
                assert!(out.value >= 0.0);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = logits(&[1.0, 2.0]);
        let b = logits(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            kd_loss(&a, &b, &DistillWeights::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn nckd_degenerate_teacher_mass_rejected() {
        // Teacher with all non-target mass numerically zero: huge margin.
        let teacher = logits(&[2000.0, 0.0, 0.0]);
        let student = logits(&[1.0, 1.0, 1.0]);
        let w = t1();
        assert!(matches!(
            nckd_loss(&teacher, &student, 0, &w),
            Err(Error::DegenerateMass(_))
        ));
    }
}
