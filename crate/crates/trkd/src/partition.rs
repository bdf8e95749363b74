//! Teacher-posterior triage: split the class set into the target, a
//! high-probability confusion-set, and a low-probability background-set
//! under a cumulative-probability cutoff, and expose aggregated masses and
//! within-set conditional distributions.
//!
//! The partition is always computed from the teacher posterior (after any
//! temperature scaling), never the student's, so set membership is constant
//! with respect to student logits and downstream gradients are well-defined.

use crate::error::{Error, Result};
use crate::prob::ProbVector;

/// Which side of the triage a class landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Target,
    Confusion,
    Background,
}

/// A triage of the class set for one example.
///
/// `confusion_set` is ordered by descending teacher probability (ties break
/// toward the lower class index); `background_set` continues that order.
/// Masses are accumulated in ascending class order, matching
/// [`three_mass_vector`] exactly.
#[derive(Debug, Clone)]
pub struct TriagePartition {
    target: usize,
    confusion_set: Vec<usize>,
    background_set: Vec<usize>,
    group_of: Vec<Group>,
    teacher_mass_target: f64,
    teacher_mass_confusion: f64,
    teacher_mass_background: f64,
}

impl TriagePartition {
    pub fn target(&self) -> usize {
        self.target
    }

    pub fn confusion_set(&self) -> &[usize] {
        &self.confusion_set
    }

    pub fn background_set(&self) -> &[usize] {
        &self.background_set
    }

    pub fn is_background_empty(&self) -> bool {
        self.background_set.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.group_of.len()
    }

    /// Per-class group assignment, indexed by class.
    pub fn group_assignments(&self) -> &[Group] {
        &self.group_of
    }

    pub fn teacher_mass_target(&self) -> f64 {
        self.teacher_mass_target
    }

    pub fn teacher_mass_confusion(&self) -> f64 {
        self.teacher_mass_confusion
    }

    pub fn teacher_mass_background(&self) -> f64 {
        self.teacher_mass_background
    }
}

/// Partition the classes of `teacher` around target `y` at cutoff `tau`.
///
/// Non-target classes are sorted by descending teacher probability (ties by
/// ascending index) and the shortest prefix whose cumulative probability
/// reaches `tau` becomes the confusion-set; the rest is the background-set.
/// If the whole non-target mass is below `tau` (always the case at
/// `tau = 1`), every non-target lands in the confusion-set and the
/// background-set is empty.
pub fn build_partition(teacher: &ProbVector, y: usize, tau: f64) -> Result<TriagePartition> {
    let c = teacher.num_classes();
    if y >= c {
        return Err(Error::IndexOutOfRange { index: y, classes: c });
    }
    if !tau.is_finite() || tau <= 0.0 || tau > 1.0 {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must lie in (0, 1], got {tau}"),
        });
    }
    if c < 2 {
        return Err(Error::Shape(
            "partitioning requires at least 2 classes".into(),
        ));
    }

    let p = teacher.probs();
    let mut order: Vec<usize> = (0..c).filter(|&i| i != y).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));

    let mut cut = order.len();
    let mut cum = 0.0;
    for (pos, &cls) in order.iter().enumerate() {
        cum += p[cls];
        if cum >= tau {
            cut = pos + 1;
            break;
        }
    }

    let confusion_set = order[..cut].to_vec();
    let background_set = order[cut..].to_vec();

    let mut group_of = vec![Group::Background; c];
    group_of[y] = Group::Target;
    for &i in &confusion_set {
        group_of[i] = Group::Confusion;
    }

    // Masses in ascending class order so they agree bit-for-bit with
    // three_mass_vector and the grouped-KL losses.
    let mut mass_confusion = 0.0;
    let mut mass_background = 0.0;
    for (i, &g) in group_of.iter().enumerate() {
        match g {
            Group::Target => {}
            Group::Confusion => mass_confusion += p[i],
            Group::Background => mass_background += p[i],
        }
    }

    Ok(TriagePartition {
        target: y,
        confusion_set,
        background_set,
        group_of,
        teacher_mass_target: p[y],
        teacher_mass_confusion: mass_confusion,
        teacher_mass_background: mass_background,
    })
}

/// Renormalize `p` over the classes in `set`, preserving set order.
pub fn conditional_over_set(p: &ProbVector, set: &[usize]) -> Result<ProbVector> {
    if set.is_empty() {
        return Err(Error::EmptySet("cannot condition on an empty class set"));
    }
    let c = p.num_classes();
    let mut seen = vec![false; c];
    for &i in set {
        if i >= c {
            return Err(Error::IndexOutOfRange { index: i, classes: c });
        }
        if seen[i] {
            return Err(Error::Shape(format!("duplicate class {i} in set")));
        }
        seen[i] = true;
    }
    let mass: f64 = set.iter().map(|&i| p.probs()[i]).sum();
    if mass <= 0.0 {
        return Err(Error::DegenerateMass(format!(
            "set of {} classes carries zero probability",
            set.len()
        )));
    }
    let log_mass = mass.ln();
    let probs = set.iter().map(|&i| p.probs()[i] / mass).collect();
    let log_probs = set.iter().map(|&i| p.log_probs()[i] - log_mass).collect();
    Ok(ProbVector::from_parts(probs, log_probs))
}

/// Aggregate `p` into `[p_target, p_confusion, p_background]` under `part`,
/// dropping the background entry when the background-set is empty.
pub fn three_mass_vector(p: &ProbVector, part: &TriagePartition) -> Result<ProbVector> {
    if p.num_classes() != part.num_classes() {
        return Err(Error::Shape(format!(
            "distribution has {} classes but partition covers {}",
            p.num_classes(),
            part.num_classes()
        )));
    }
    let mut mass_confusion = 0.0;
    let mut mass_background = 0.0;
    for (i, &g) in part.group_of.iter().enumerate() {
        match g {
            Group::Target => {}
            Group::Confusion => mass_confusion += p.probs()[i],
            Group::Background => mass_background += p.probs()[i],
        }
    }
    let p_target = p.probs()[part.target];
    let mut probs = vec![p_target, mass_confusion];
    let mut log_probs = vec![p.log_probs()[part.target], mass_confusion.ln()];
    if !part.is_background_empty() {
        probs.push(mass_background);
        log_probs.push(mass_background.ln());
    }
    Ok(ProbVector::from_parts(probs, log_probs))
}
