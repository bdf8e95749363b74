//! Training loops: margin-softmax teacher training and teacher-to-student
//! distillation with any of the implemented objectives.
//!
//! The teacher is frozen during distillation; its logits for distillation
//! are the margin-free scaled cosines (the inference-time posterior), so
//! the non-target structure being transferred is not margin-distorted.
//! Distillation gradients flow into the student network and the student's
//! classification head only.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::data::{Dataset, DatasetSplits};
use super::mlp::{LayerGrads, Mlp, MlpGrads, MlpSpec};
use super::optim::{sgd_step, DistillMethod, TrainConfig};
use crate::aux_losses::{aam_softmax_loss, cos_embed_loss, l2_norm, mse_embed_loss, AamConfig, Embedding};
use crate::distill::{cfkd_loss, kd_loss, nckd_loss, tckd_loss, tmkd_loss, DistillWeights};
use crate::error::{Error, Result};
use crate::eval::{build_trials, compute_eer, TrialScoreSet};
use crate::partition;
use crate::prob::{self, LogitVector};

// Distinct seed streams derived from the one user-facing seed.
const SEED_NET: u64 = 0x0074_726b_6401;
const SEED_HEAD: u64 = 0x0074_726b_6402;
const SEED_SHUFFLE: u64 = 0x0074_726b_6403;

/// Margin-softmax hyperparameters (the class weights are model state).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AamHyper {
    pub scale: f64,
    pub margin: f64,
}

/// One training step of a distillation run, serialized as a JSON line.
/// Method-specific fields are omitted when the method does not produce
/// them, so a `none` run carries no distillation columns at all.
#[derive(Debug, Clone, Serialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub loss_total: f64,
    pub loss_aam: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_kd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_tckd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_nckd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_tmkd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_cfkd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_embed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion_size_mean: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TeacherEpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<TeacherEpochRecord>,
    /// Batch-mean loss of the very first step, before any update (the
    /// learning rate is still zero there under warmup).
    pub first_step_loss: f64,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRecord>,
}

/// Everything one example contributes to a training step.
#[derive(Debug, Clone)]
pub(crate) struct ObjectiveOutput {
    pub total: f64,
    pub aam_value: f64,
    /// First distillation component, unweighted (KD / TCKD / TMKD / embed).
    pub distill_primary: f64,
    /// Second distillation component, unweighted (NCKD / CFKD), if any.
    pub distill_secondary: f64,
    pub confusion_size: usize,
    pub predicted: usize,
    pub mlp_grads: MlpGrads,
    pub head_grads: Vec<Vec<f64>>,
}

fn unit_rows(classes: usize, dim: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            loop {
                let row: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = l2_norm(&row);
                if norm > 1e-6 {
                    return row.into_iter().map(|v| v / norm).collect();
                }
            }
        })
        .collect()
}

fn renormalize_rows(rows: &mut [Vec<f64>]) {
    for row in rows {
        let norm = l2_norm(row);
        // A non-finite or zero norm means the parameters degenerated; leave
        // the row for the per-step finiteness check to report.
        if norm.is_finite() && norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
}

/// Margin-free scaled cosine scores of an embedding against a head.
fn cosine_scores(head: &[Vec<f64>], embedding: &[f64], scale: f64) -> Result<Vec<f64>> {
    let norm = l2_norm(embedding);
    if norm <= 0.0 {
        return Err(Error::DegenerateInput("zero-norm embedding".into()));
    }
    Ok(head
        .iter()
        .map(|w| scale * w.iter().zip(embedding).map(|(a, b)| a * b).sum::<f64>() / norm)
        .collect())
}

/// The per-example training objective: margin-softmax classification plus
/// the selected distillation term, with gradients for the network and the
/// classification head.
#[allow(clippy::too_many_arguments)]
pub(crate) fn example_objective(
    mlp: &Mlp,
    head_cfg: &AamConfig,
    method: DistillMethod,
    weights: &DistillWeights,
    tau: f64,
    teacher_logits: Option<&LogitVector>,
    teacher_embedding: Option<&[f64]>,
    x: &[f64],
    y: usize,
) -> Result<ObjectiveOutput> {
    let cache = mlp.forward(x)?;
    let emb_raw = cache.embedding().to_vec();
    let embedding = Embedding::new(emb_raw.clone())?;
    let aam = aam_softmax_loss(&embedding, y, head_cfg)?;

    let mut grad_embedding = aam.grad_embedding;
    let mut head_grads = aam.grad_class_weights;
    let mut distill_primary = 0.0;
    let mut distill_secondary = 0.0;
    let mut weighted_distill = 0.0;
    let mut confusion_size = 0usize;

    if method.uses_teacher_logits() {
        let teacher = teacher_logits.ok_or(Error::State("teacher logits missing"))?;
        let scale = head_cfg.scale();
        let scores = cosine_scores(head_cfg.class_weights(), &emb_raw, scale)?;
        let student = LogitVector::new(scores)?;

        let (w_distill, grad_logits) = match method {
            DistillMethod::Kd => {
                let out = kd_loss(teacher, &student, weights)?;
                distill_primary = out.value;
                (out.value, out.grad_student_logits)
            }
            DistillMethod::Dkd => {
                let a = tckd_loss(teacher, &student, y, weights)?;
                let b = nckd_loss(teacher, &student, y, weights)?;
                distill_primary = a.value;
                distill_secondary = b.value;
                let combined = weights.alpha * a.value + weights.beta * b.value;
                let grad = a
                    .grad_student_logits
                    .iter()
                    .zip(&b.grad_student_logits)
                    .map(|(ga, gb)| weights.alpha * ga + weights.beta * gb)
                    .collect();
                (combined, grad)
            }
            DistillMethod::Trkd => {
                let pt = prob::softmax(&prob::temperature_scale(teacher, weights.temperature)?);
                let part = partition::build_partition(&pt, y, tau)?;
                confusion_size = part.confusion_set().len();
                let a = tmkd_loss(teacher, &student, &part, weights)?;
                let b = cfkd_loss(teacher, &student, &part, weights)?;
                distill_primary = a.value;
                distill_secondary = b.value;
                let combined = weights.lambda_m * a.value + weights.lambda_f * b.value;
                let grad = a
                    .grad_student_logits
                    .iter()
                    .zip(&b.grad_student_logits)
                    .map(|(ga, gb)| weights.lambda_m * ga + weights.lambda_f * gb)
                    .collect();
                (combined, grad)
            }
            _ => unreachable!("guarded by uses_teacher_logits"),
        };
        weighted_distill = w_distill;

        // Chain through logits = scale * W unit(e): first to the unit
        // embedding and the head rows, then through the normalization.
        let norm = l2_norm(&emb_raw);
        let unit: Vec<f64> = emb_raw.iter().map(|v| v / norm).collect();
        let mut grad_unit = vec![0.0; unit.len()];
        for (j, &g) in grad_logits.iter().enumerate() {
            let g_cos = g * scale;
            for ((gu, &w), (hg, &u)) in grad_unit
                .iter_mut()
                .zip(&head_cfg.class_weights()[j])
                .zip(head_grads[j].iter_mut().zip(&unit))
            {
                *gu += g_cos * w;
                *hg += g_cos * u;
            }
        }
        let radial: f64 = grad_unit.iter().zip(&unit).map(|(g, u)| g * u).sum();
        for ((ge, &gu), &u) in grad_embedding.iter_mut().zip(&grad_unit).zip(&unit) {
            *ge += (gu - radial * u) / norm;
        }
    } else if method.uses_teacher_embedding() {
        let teacher =
            teacher_embedding.ok_or(Error::State("teacher embedding missing"))?;
        let teacher = Embedding::new(teacher.to_vec())?;
        let out = match method {
            DistillMethod::Mse => mse_embed_loss(&embedding, &teacher)?,
            DistillMethod::Cos => cos_embed_loss(&embedding, &teacher)?,
            _ => unreachable!("guarded by uses_teacher_embedding"),
        };
        distill_primary = out.value;
        weighted_distill = out.value;
        for (ge, g) in grad_embedding.iter_mut().zip(&out.grad_student) {
            *ge += g;
        }
    }

    let mlp_grads = mlp.backward(&cache, &grad_embedding)?;
    Ok(ObjectiveOutput {
        total: aam.value + weighted_distill,
        aam_value: aam.value,
        distill_primary,
        distill_secondary,
        confusion_size,
        predicted: aam.predicted,
        mlp_grads,
        head_grads,
    })
}

struct Velocity {
    layers: Vec<LayerGrads>,
    head: Vec<Vec<f64>>,
}

impl Velocity {
    fn zeros(mlp: &Mlp, head: &[Vec<f64>]) -> Self {
        Self {
            layers: MlpGrads::zeros_like(mlp).layers,
            head: head.iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }
}

struct HeadGradBuffer(Vec<Vec<f64>>);

impl HeadGradBuffer {
    fn zeros(head: &[Vec<f64>]) -> Self {
        Self(head.iter().map(|r| vec![0.0; r.len()]).collect())
    }

    fn add_assign(&mut self, other: &[Vec<f64>]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for row in &mut self.0 {
            for x in row.iter_mut() {
                *x *= s;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_step(
    mlp: &mut Mlp,
    head: &mut [Vec<f64>],
    velocity: &mut Velocity,
    mlp_grads: &MlpGrads,
    head_grads: &HeadGradBuffer,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    for (layer, (v, g)) in mlp
        .layers_mut()
        .iter_mut()
        .zip(velocity.layers.iter_mut().zip(&mlp_grads.layers))
    {
        sgd_step(&mut layer.weights, &mut v.weights, &g.weights, lr, momentum)?;
        sgd_step(&mut layer.biases, &mut v.biases, &g.biases, lr, momentum)?;
    }
    for ((row, v), g) in head.iter_mut().zip(velocity.head.iter_mut()).zip(&head_grads.0) {
        sgd_step(row, v, g, lr, momentum)?;
    }
    renormalize_rows(head);
    Ok(())
}

fn params_finite(mlp: &Mlp, head: &[Vec<f64>]) -> bool {
    mlp.params_finite() && head.iter().all(|r| r.iter().all(|v| v.is_finite()))
}

fn shuffled_batches(
    n: usize,
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    indices.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Train a teacher with the margin-softmax loss only. Deterministic given
/// the seed; aborts with a divergence report naming the step if the loss
/// or any parameter goes non-finite.
pub fn train_teacher(
    data: &DatasetSplits,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    aam: &AamHyper,
) -> Result<TeacherRun> {
    cfg.validate()?;
    if spec.input_dim() != data.input_dim {
        return Err(Error::Shape(format!(
            "network expects inputs of dimension {} but data has {}",
            spec.input_dim(),
            data.input_dim
        )));
    }
    let mut mlp = Mlp::init(spec, cfg.seed ^ SEED_NET);
    let mut head_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SEED_HEAD);
    let mut head = unit_rows(data.num_classes, spec.embedding_dim(), &mut head_rng);
    let mut velocity = Velocity::zeros(&mlp, &head);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SEED_SHUFFLE);
    // Validates the margin-softmax hyperparameters up front; later
    // constructions can only fail through parameter degeneration.
    AamConfig::new(aam.scale, aam.margin, head.clone())?;

    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut step: u64 = 0;
    let mut epochs_out = Vec::with_capacity(cfg.epochs);
    let mut first_step_loss = 0.0;

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        for batch in shuffled_batches(n, cfg.batch_size, &mut shuffle_rng) {
            let lr = cfg.lr_at(steps_per_epoch, step);
            let head_cfg = AamConfig::new(aam.scale, aam.margin, head.clone())
                .map_err(|e| Error::Diverged { step, what: e.to_string() })?;
            let mut grads = MlpGrads::zeros_like(&mlp);
            let mut head_grads = HeadGradBuffer::zeros(&head);
            let mut batch_loss = 0.0;
            for &i in &batch {
                let out = example_objective(
                    &mlp,
                    &head_cfg,
                    DistillMethod::None,
                    &cfg.distill_weights,
                    1.0,
                    None,
                    None,
                    &data.train.inputs[i],
                    data.train.labels[i],
                )
                .map_err(|e| Error::Diverged { step, what: e.to_string() })?;
                batch_loss += out.total;
                if out.predicted == data.train.labels[i] {
                    epoch_correct += 1;
                }
                grads.add_assign(&out.mlp_grads);
                head_grads.add_assign(&out.head_grads);
            }
            let inv = 1.0 / batch.len() as f64;
            batch_loss *= inv;
            grads.scale(inv);
            head_grads.scale(inv);
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { step, what: format!("loss {batch_loss}") });
            }
            if step == 0 {
                first_step_loss = batch_loss;
            }
            apply_step(&mut mlp, &mut head, &mut velocity, &grads, &head_grads, lr, cfg.momentum)?;
            if !params_finite(&mlp, &head) {
                return Err(Error::Diverged { step, what: "non-finite parameters".into() });
            }
            epoch_loss += batch_loss;
            step += 1;
        }
        epochs_out.push(TeacherEpochRecord {
            epoch,
            mean_loss: epoch_loss / steps_per_epoch as f64,
            train_accuracy: epoch_correct as f64 / n as f64,
        });
    }

    Ok(TeacherRun {
        checkpoint: Checkpoint { mlp, class_weights: head },
        epochs: epochs_out,
        first_step_loss,
    })
}

/// Teacher signals for distillation, precomputed once (the teacher is
/// frozen, so its outputs per train example never change).
fn teacher_signals(
    teacher: &Checkpoint,
    scale: f64,
    data: &Dataset,
    want_logits: bool,
    want_embeddings: bool,
) -> Result<(Vec<LogitVector>, Vec<Vec<f64>>)> {
    let mut logits = Vec::new();
    let mut embeddings = Vec::new();
    for x in &data.inputs {
        let cache = teacher.mlp.forward(x)?;
        let emb = cache.embedding();
        if want_logits {
            logits.push(LogitVector::new(cosine_scores(
                &teacher.class_weights,
                emb,
                scale,
            )?)?);
        }
        if want_embeddings {
            embeddings.push(emb.to_vec());
        }
    }
    Ok((logits, embeddings))
}

/// Distill a student from a frozen teacher with the configured method.
/// Per step, the cutoff follows the curriculum (only consumed by the
/// triage method), and the log records one JSON-able row with the step's
/// batch-mean loss components.
pub fn distill_student(
    teacher: &Checkpoint,
    aam: &AamHyper,
    data: &DatasetSplits,
    student_spec: &MlpSpec,
    cfg: &TrainConfig,
) -> Result<StudentRun> {
    cfg.validate()?;
    if student_spec.input_dim() != data.input_dim {
        return Err(Error::Shape(format!(
            "student expects inputs of dimension {} but data has {}",
            student_spec.input_dim(),
            data.input_dim
        )));
    }
    if teacher.mlp.input_dim() != data.input_dim {
        return Err(Error::Shape(format!(
            "teacher expects inputs of dimension {} but data has {}",
            teacher.mlp.input_dim(),
            data.input_dim
        )));
    }
    if teacher.num_classes() != data.num_classes {
        return Err(Error::Shape(format!(
            "teacher has {} classes but data has {}",
            teacher.num_classes(),
            data.num_classes
        )));
    }
    if cfg.method.uses_teacher_embedding()
        && teacher.mlp.embedding_dim() != student_spec.embedding_dim()
    {
        return Err(Error::Shape(format!(
            "embedding-level distillation needs matching dimensions; teacher {} vs student {}",
            teacher.mlp.embedding_dim(),
            student_spec.embedding_dim()
        )));
    }

    let (teacher_logits, teacher_embeddings) = teacher_signals(
        teacher,
        aam.scale,
        &data.train,
        cfg.method.uses_teacher_logits(),
        cfg.method.uses_teacher_embedding(),
    )?;

    let mut mlp = Mlp::init(student_spec, cfg.seed ^ SEED_NET);
    let mut head_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SEED_HEAD);
    let mut head = unit_rows(data.num_classes, student_spec.embedding_dim(), &mut head_rng);
    let mut velocity = Velocity::zeros(&mlp, &head);
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SEED_SHUFFLE);
    AamConfig::new(aam.scale, aam.margin, head.clone())?;

    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut step: u64 = 0;
    let mut log = Vec::with_capacity(cfg.epochs * steps_per_epoch);

    for epoch in 0..cfg.epochs {
        for batch in shuffled_batches(n, cfg.batch_size, &mut shuffle_rng) {
            let lr = cfg.lr_at(steps_per_epoch, step);
            let tau = cfg.tau_schedule.tau_at(step);
            let head_cfg = AamConfig::new(aam.scale, aam.margin, head.clone())
                .map_err(|e| Error::Diverged { step, what: e.to_string() })?;
            let mut grads = MlpGrads::zeros_like(&mlp);
            let mut head_grads = HeadGradBuffer::zeros(&head);
            let (mut loss_total, mut loss_aam) = (0.0, 0.0);
            let (mut primary, mut secondary) = (0.0, 0.0);
            let mut confusion_sum = 0usize;
            for &i in &batch {
                let out = example_objective(
                    &mlp,
                    &head_cfg,
                    cfg.method,
                    &cfg.distill_weights,
                    tau,
                    teacher_logits.get(i),
                    teacher_embeddings.get(i).map(Vec::as_slice),
                    &data.train.inputs[i],
                    data.train.labels[i],
                )
                .map_err(|e| Error::Diverged { step, what: e.to_string() })?;
                loss_total += out.total;
                loss_aam += out.aam_value;
                primary += out.distill_primary;
                secondary += out.distill_secondary;
                confusion_sum += out.confusion_size;
                grads.add_assign(&out.mlp_grads);
                head_grads.add_assign(&out.head_grads);
            }
            let inv = 1.0 / batch.len() as f64;
            loss_total *= inv;
            loss_aam *= inv;
            primary *= inv;
            secondary *= inv;
            grads.scale(inv);
            head_grads.scale(inv);
            if !loss_total.is_finite() {
                return Err(Error::Diverged { step, what: format!("loss {loss_total}") });
            }
            apply_step(&mut mlp, &mut head, &mut velocity, &grads, &head_grads, lr, cfg.momentum)?;
            if !params_finite(&mlp, &head) {
                return Err(Error::Diverged { step, what: "non-finite parameters".into() });
            }

            let mut record = TrainLogRecord {
                step,
                epoch,
                lr,
                tau: None,
                loss_total,
                loss_aam,
                loss_kd: None,
                loss_tckd: None,
                loss_nckd: None,
                loss_tmkd: None,
                loss_cfkd: None,
                loss_embed: None,
                confusion_size_mean: None,
            };
            match cfg.method {
                DistillMethod::None => {}
                DistillMethod::Kd => record.loss_kd = Some(primary),
                DistillMethod::Dkd => {
                    record.loss_tckd = Some(primary);
                    record.loss_nckd = Some(secondary);
                }
                DistillMethod::Trkd => {
                    record.tau = Some(tau);
                    record.loss_tmkd = Some(primary);
                    record.loss_cfkd = Some(secondary);
                    record.confusion_size_mean =
                        Some(confusion_sum as f64 / batch.len() as f64);
                }
                DistillMethod::Mse | DistillMethod::Cos => record.loss_embed = Some(primary),
            }
            log.push(record);
            step += 1;
        }
    }

    Ok(StudentRun {
        checkpoint: Checkpoint { mlp, class_weights: head },
        log,
    })
}

/// Forward a whole dataset through a network.
pub fn embed_dataset(mlp: &Mlp, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.inputs
        .iter()
        .map(|x| Ok(mlp.forward(x)?.embedding().to_vec()))
        .collect()
}

/// Cosine-score verification trials over a dataset's embeddings and return
/// the equal error rate with the underlying scores.
pub fn evaluate_eer(
    mlp: &Mlp,
    data: &Dataset,
    pairs_per_class: usize,
    seed: u64,
) -> Result<(f64, TrialScoreSet)> {
    let embeddings = embed_dataset(mlp, data)?;
    let trials = build_trials(&embeddings, &data.labels, pairs_per_class, seed)?;
    let eer = compute_eer(&trials)?;
    Ok((eer, trials))
}
