//! Non-distillation objectives: additive-angular-margin softmax
//! classification over unit-norm class weights, and the embedding-level
//! MSE / cosine baselines.

use crate::error::{Error, Result};

/// A network output vector; entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter {
                name: "embedding",
                reason: "empty embedding".into(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "embedding",
                reason: format!("non-finite entry {bad}"),
            });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Margin-softmax configuration: scale, additive angular margin, and the
/// unit-norm class weight matrix (one row per class).
#[derive(Debug, Clone)]
pub struct AamConfig {
    scale: f64,
    margin: f64,
    class_weights: Vec<Vec<f64>>,
}

impl AamConfig {
    pub fn new(scale: f64, margin: f64, class_weights: Vec<Vec<f64>>) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "scale",
                reason: format!("must be positive and finite, got {scale}"),
            });
        }
        if !margin.is_finite() || !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::InvalidParameter {
                name: "margin",
                reason: format!("must lie in [0, pi/2), got {margin}"),
            });
        }
        if class_weights.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "class_weights",
                reason: format!("need at least 2 classes, got {}", class_weights.len()),
            });
        }
        let dim = class_weights[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "class_weights",
                reason: "zero-dimensional class weights".into(),
            });
        }
        for (j, row) in class_weights.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Shape(format!(
                    "class weight {j} has dimension {} but expected {dim}",
                    row.len()
                )));
            }
            let norm = l2_norm(row);
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter {
                    name: "class_weights",
                    reason: format!("class weight {j} has norm {norm}, expected 1"),
                });
            }
        }
        Ok(Self { scale, margin, class_weights })
    }

    /// Bypass the unit-norm validation; used by finite-difference checks
    /// that perturb individual weight entries.
    pub(crate) fn new_unchecked(scale: f64, margin: f64, class_weights: Vec<Vec<f64>>) -> Self {
        Self { scale, margin, class_weights }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn class_weights(&self) -> &[Vec<f64>] {
        &self.class_weights
    }

    pub fn num_classes(&self) -> usize {
        self.class_weights.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.class_weights[0].len()
    }
}

/// Margin-softmax loss with gradients for both the embedding and the class
/// weight matrix, plus the margin-free argmax for accuracy tracking.
#[derive(Debug, Clone)]
pub struct AamLossGrad {
    pub value: f64,
    pub grad_embedding: Vec<f64>,
    pub grad_class_weights: Vec<Vec<f64>>,
    /// Argmax over the raw cosines (no margin): the inference-time decision.
    pub predicted: usize,
}

/// An embedding-level loss value with its gradient against the student
/// embedding (the teacher side is a constant).
#[derive(Debug, Clone)]
pub struct EmbeddingLossGrad {
    pub value: f64,
    pub grad_student: Vec<f64>,
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Margin-softmax cross-entropy: normalize the embedding, score cosines
/// against every class weight, replace the target cosine with
/// `cos(theta_y + m)` (falling back to the linear extension
/// `cos(theta_y) - m*sin(m)` past `pi - m`), scale by `s`, and take the
/// softmax cross-entropy against `y`.
pub fn aam_softmax_loss(embedding: &Embedding, y: usize, cfg: &AamConfig) -> Result<AamLossGrad> {
    let c = cfg.num_classes();
    let d = cfg.embedding_dim();
    if embedding.dim() != d {
        return Err(Error::Shape(format!(
            "embedding has dimension {} but class weights expect {d}",
            embedding.dim()
        )));
    }
    if y >= c {
        return Err(Error::IndexOutOfRange { index: y, classes: c });
    }
    let norm = l2_norm(embedding.values());
    if norm <= 0.0 {
        return Err(Error::DegenerateInput("zero-norm embedding".into()));
    }
    let unit: Vec<f64> = embedding.values().iter().map(|v| v / norm).collect();

    let cosines: Vec<f64> = cfg
        .class_weights
        .iter()
        .map(|w| dot(w, &unit).clamp(-1.0, 1.0))
        .collect();
    let predicted = cosines
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let m = cfg.margin;
    let (cos_m, sin_m) = (m.cos(), m.sin());
    let cos_y = cosines[y];
    // Margin branch: cos(theta + m) while theta + m stays below pi,
    // otherwise the monotone linear extension.
    let (target_score, target_slope) = if cos_y > (std::f64::consts::PI - m).cos() {
        let sin_y = (1.0 - cos_y * cos_y).sqrt();
        let slope = if sin_y > 0.0 { cos_m + cos_y * sin_m / sin_y } else { cos_m };
        (cos_y * cos_m - sin_y * sin_m, slope)
    } else {
        (cos_y - m * sin_m, 1.0)
    };

    let s = cfg.scale;
    let scores: Vec<f64> = cosines
        .iter()
        .enumerate()
        .map(|(j, &cj)| if j == y { s * target_score } else { s * cj })
        .collect();
    let lse = crate::prob::log_sum_exp(&scores);
    let value = lse - scores[y];
    let soft: Vec<f64> = scores.iter().map(|&z| (z - lse).exp()).collect();

    // d value / d cosine_j, through the margin on the target.
    let grad_cos: Vec<f64> = soft
        .iter()
        .enumerate()
        .map(|(j, &qj)| {
            let dl_dscore = qj - if j == y { 1.0 } else { 0.0 };
            let slope = if j == y { target_slope } else { 1.0 };
            dl_dscore * s * slope
        })
        .collect();

    let grad_class_weights: Vec<Vec<f64>> = grad_cos
        .iter()
        .map(|&g| unit.iter().map(|&u| g * u).collect())
        .collect();

    let mut grad_unit = vec![0.0; d];
    for (g, w) in grad_cos.iter().zip(&cfg.class_weights) {
        for (gu, &wk) in grad_unit.iter_mut().zip(w) {
            *gu += g * wk;
        }
    }
    // Back through the normalization: (I - u u^T) / ||e||.
    let radial = dot(&grad_unit, &unit);
    let grad_embedding = grad_unit
        .iter()
        .zip(&unit)
        .map(|(&g, &u)| (g - radial * u) / norm)
        .collect();

    Ok(AamLossGrad { value, grad_embedding, grad_class_weights, predicted })
}

/// Mean squared error over embedding dimensions.
pub fn mse_embed_loss(student: &Embedding, teacher: &Embedding) -> Result<EmbeddingLossGrad> {
    if student.dim() != teacher.dim() {
        return Err(Error::Shape(format!(
            "student embedding has dimension {} but teacher has {}",
            student.dim(),
            teacher.dim()
        )));
    }
    let d = student.dim() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(student.dim());
    for (s, t) in student.values().iter().zip(teacher.values()) {
        let diff = s - t;
        value += diff * diff / d;
        grad.push(2.0 * diff / d);
    }
    Ok(EmbeddingLossGrad { value, grad_student: grad })
}

/// Cosine distance `1 - cos(student, teacher)`.
pub fn cos_embed_loss(student: &Embedding, teacher: &Embedding) -> Result<EmbeddingLossGrad> {
    if student.dim() != teacher.dim() {
        return Err(Error::Shape(format!(
            "student embedding has dimension {} but teacher has {}",
            student.dim(),
            teacher.dim()
        )));
    }
    let ns = l2_norm(student.values());
    let nt = l2_norm(teacher.values());
    if ns <= 0.0 || nt <= 0.0 {
        return Err(Error::DegenerateInput("zero-norm embedding".into()));
    }
    let cos = dot(student.values(), teacher.values()) / (ns * nt);
    let grad = student
        .values()
        .iter()
        .zip(teacher.values())
        .map(|(&s, &t)| cos * s / (ns * ns) - t / (ns * nt))
        .collect();
    Ok(EmbeddingLossGrad { value: 1.0 - cos, grad_student: grad })
}
