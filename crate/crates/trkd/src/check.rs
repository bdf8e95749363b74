//! Randomized self-verification: the algebraic identities tying the
//! decompositions back to the full KL divergence, the cutoff-1 equivalence
//! of the decoupled and triage losses, and central finite-difference
//! gradient checks for every loss and the full network backward pass.
//!
//! These suites are the oracles behind the `selfcheck` command and the
//! acceptance tests. The finite-difference side only ever evaluates loss
//! *values*, so it is independent of the analytic gradient code it checks.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::aux_losses::{
    aam_softmax_loss, cos_embed_loss, l2_norm, mse_embed_loss, AamConfig, Embedding,
};
use crate::distill::{
    bgkd_loss, cfkd_loss, dkd_loss, kd_decomposition_check, kd_loss, nckd_loss, tckd_loss,
    tmkd_loss, trkd_loss, DistillWeights,
};
use crate::error::Result;
use crate::partition;
use crate::pipeline::{example_objective, AamHyper, DistillMethod, Mlp, MlpSpec};
use crate::prob::{self, LogitVector};

pub const IDENTITY_TOLERANCE: f64 = 1e-10;
pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const NETWORK_GRAD_TOLERANCE: f64 = 1e-5;
pub const GRAD_GATE: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one randomized suite.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub max_residual: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_residual.is_finite() && self.max_residual <= self.tolerance
    }
}

/// Central finite differences of `f` at `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Largest elementwise relative error between the two gradients.
///
/// The gate is an absolute floor on the discrepancy: differences at or
/// below it are indistinguishable from central-difference roundoff
/// (`eps * |loss| / 2h` is of that order for these losses at `h = 1e-5`),
/// so only entries whose discrepancy exceeds the gate are held to the
/// relative bound. A wrong analytic gradient produces discrepancies on the
/// scale of the gradient itself and is always caught.
pub fn gated_max_rel_error(analytic: &[f64], fd: &[f64], gate: f64) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &f)| {
            let diff = (a - f).abs();
            if diff > gate {
                diff / a.abs().max(f.abs())
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

fn random_logits(rng: &mut ChaCha20Rng, c: usize, span: f64) -> LogitVector {
    LogitVector::new((0..c).map(|_| rng.gen_range(-span..span)).collect())
        .expect("finite logits")
}

fn random_tau(rng: &mut ChaCha20Rng) -> f64 {
    1.0 - rng.gen::<f64>() // (0, 1]
}

/// `|KL - (TCKD + p_nontarget * NCKD)|` at temperature 1 with the
/// sample-dependent prefactor retained.
pub fn eq6_residual(teacher: &LogitVector, student: &LogitVector, y: usize) -> Result<f64> {
    let w = DistillWeights { temperature: 1.0, ..Default::default() };
    let kl = kd_loss(teacher, student, &w)?.value;
    let target = tckd_loss(teacher, student, y, &w)?.value;
    let cond = nckd_loss(teacher, student, y, &w)?.value;
    let pt = prob::softmax(teacher);
    let non_target_mass: f64 = pt
        .probs()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .map(|(_, &p)| p)
        .sum();
    Ok((kl - (target + non_target_mass * cond)).abs())
}

pub fn run_eq6_check(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_residual: f64 = 0.0;
    for _ in 0..trials {
        let c = rng.gen_range(3..=200);
        let teacher = random_logits(&mut rng, c, 5.0);
        let student = random_logits(&mut rng, c, 5.0);
        let y = rng.gen_range(0..c);
        let r = eq6_residual(&teacher, &student, y).expect("valid inputs");
        max_residual = max_residual.max(r);
    }
    CheckReport {
        name: "eq-target-nontarget-identity".into(),
        trials,
        max_residual,
        tolerance: IDENTITY_TOLERANCE,
    }
}

pub fn run_eq14_check(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_residual: f64 = 0.0;
    for _ in 0..trials {
        let c = rng.gen_range(3..=200);
        let teacher = random_logits(&mut rng, c, 5.0);
        let student = random_logits(&mut rng, c, 5.0);
        let y = rng.gen_range(0..c);
        let tau = random_tau(&mut rng);
        let r = kd_decomposition_check(&teacher, &student, y, tau).expect("valid inputs");
        max_residual = max_residual.max(r);
    }
    CheckReport {
        name: "eq-three-mass-identity".into(),
        trials,
        max_residual,
        tolerance: IDENTITY_TOLERANCE,
    }
}

/// Agreement of the decoupled loss and the triage loss at cutoff 1 with
/// matching weights, in value and gradient.
pub fn run_dkd_trkd_equivalence(trials: usize, seed: u64) -> (CheckReport, CheckReport) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w = DistillWeights::default();
    let mut max_value: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for _ in 0..trials {
        let c = rng.gen_range(3..=100);
        let teacher = random_logits(&mut rng, c, 5.0);
        let student = random_logits(&mut rng, c, 5.0);
        let y = rng.gen_range(0..c);
        let a = dkd_loss(&teacher, &student, y, &w).expect("valid");
        let b = trkd_loss(&teacher, &student, y, 1.0, &w).expect("valid");
        max_value = max_value.max((a.value - b.value).abs());
        for (ga, gb) in a.grad_student_logits.iter().zip(&b.grad_student_logits) {
            max_grad = max_grad.max((ga - gb).abs());
        }
    }
    (
        CheckReport {
            name: "dkd-trkd-tau1-value".into(),
            trials,
            max_residual: max_value,
            tolerance: IDENTITY_TOLERANCE,
        },
        CheckReport {
            name: "dkd-trkd-tau1-grad".into(),
            trials,
            max_residual: max_grad,
            tolerance: IDENTITY_TOLERANCE,
        },
    )
}

fn fd_check_logit_loss(
    name: &str,
    trials: usize,
    seed: u64,
    loss: impl Fn(&LogitVector, &LogitVector, usize, f64, &DistillWeights) -> Result<(f64, Vec<f64>)>,
) -> CheckReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..trials {
        let c = 10;
        let teacher = random_logits(&mut rng, c, 3.0);
        let student = random_logits(&mut rng, c, 3.0);
        let y = rng.gen_range(0..c);
        let tau = random_tau(&mut rng);
        let temperature = [1.0, 2.0, 4.0][rng.gen_range(0..3)];
        let w = DistillWeights { temperature, ..Default::default() };
        let (_, analytic) = loss(&teacher, &student, y, tau, &w).expect("valid");
        let mut f = |s: &[f64]| {
            let sv = LogitVector::new(s.to_vec()).expect("finite");
            loss(&teacher, &sv, y, tau, &w).expect("valid").0
        };
        let fd = central_difference(&mut f, student.values(), FD_STEP);
        max_rel = max_rel.max(gated_max_rel_error(&analytic, &fd, GRAD_GATE));
    }
    CheckReport {
        name: format!("grad-{name}"),
        trials,
        max_residual: max_rel,
        tolerance: GRAD_TOLERANCE,
    }
}

/// Finite-difference checks for every logit-level loss.
pub fn run_loss_gradient_checks(trials: usize, seed: u64) -> Vec<CheckReport> {
    let unpack = |r: crate::distill::LossValueGrad| (r.value, r.grad_student_logits);
    vec![
        fd_check_logit_loss("kd", trials, seed ^ 0x01, |t, s, _, _, w| {
            kd_loss(t, s, w).map(unpack)
        }),
        fd_check_logit_loss("tckd", trials, seed ^ 0x02, |t, s, y, _, w| {
            tckd_loss(t, s, y, w).map(unpack)
        }),
        fd_check_logit_loss("nckd", trials, seed ^ 0x03, |t, s, y, _, w| {
            nckd_loss(t, s, y, w).map(unpack)
        }),
        fd_check_logit_loss("dkd", trials, seed ^ 0x04, |t, s, y, _, w| {
            dkd_loss(t, s, y, w).map(unpack)
        }),
        fd_check_logit_loss("tmkd", trials, seed ^ 0x05, |t, s, y, tau, w| {
            let pt = prob::softmax(&prob::temperature_scale(t, w.temperature)?);
            let part = partition::build_partition(&pt, y, tau)?;
            tmkd_loss(t, s, &part, w).map(unpack)
        }),
        fd_check_logit_loss("cfkd", trials, seed ^ 0x06, |t, s, y, tau, w| {
            let pt = prob::softmax(&prob::temperature_scale(t, w.temperature)?);
            let part = partition::build_partition(&pt, y, tau)?;
            cfkd_loss(t, s, &part, w).map(unpack)
        }),
        fd_check_logit_loss("bgkd", trials, seed ^ 0x07, |t, s, y, _, w| {
            // Moderate cutoff keeps the background-set non-empty for most
            // draws; empty backgrounds still exercise the zero case.
            let pt = prob::softmax(&prob::temperature_scale(t, w.temperature)?);
            let part = partition::build_partition(&pt, y, 0.4)?;
            bgkd_loss(t, s, &part, w).map(unpack)
        }),
        fd_check_logit_loss("trkd", trials, seed ^ 0x08, |t, s, y, tau, w| {
            trkd_loss(t, s, y, tau, w).map(unpack)
        }),
        fd_check_aam(trials, seed ^ 0x09),
        fd_check_embed("mse", trials, seed ^ 0x0a, |s, t| {
            mse_embed_loss(s, t).map(|r| (r.value, r.grad_student))
        }),
        fd_check_embed("cos", trials, seed ^ 0x0b, |s, t| {
            cos_embed_loss(s, t).map(|r| (r.value, r.grad_student))
        }),
    ]
}

fn random_unit_rows(rng: &mut ChaCha20Rng, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let row: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = l2_norm(&row).max(1e-3);
            row.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

fn random_embedding(rng: &mut ChaCha20Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        if l2_norm(&v) > 0.3 {
            return v;
        }
    }
}

fn fd_check_aam(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    let (c, d) = (8, 6);
    for _ in 0..trials {
        let weights = random_unit_rows(&mut rng, c, d);
        let emb = random_embedding(&mut rng, d);
        let y = rng.gen_range(0..c);
        let scale = rng.gen_range(4.0..32.0);
        let margin = rng.gen_range(0.0..0.5);
        let cfg = AamConfig::new_unchecked(scale, margin, weights.clone());
        let out = aam_softmax_loss(&Embedding::new(emb.clone()).unwrap(), y, &cfg).expect("valid");

        // Embedding gradient.
        let mut f_emb = |e: &[f64]| {
            aam_softmax_loss(&Embedding::new(e.to_vec()).unwrap(), y, &cfg)
                .expect("valid")
                .value
        };
        let fd_emb = central_difference(&mut f_emb, &emb, FD_STEP);
        max_rel = max_rel.max(gated_max_rel_error(&out.grad_embedding, &fd_emb, GRAD_GATE));

        // Class-weight gradient, row by row (perturbed rows drift off the
        // unit sphere by h, hence the unchecked constructor).
        let flat_analytic: Vec<f64> = out.grad_class_weights.concat();
        let flat_w: Vec<f64> = weights.concat();
        let emb_for_w = Embedding::new(emb.clone()).unwrap();
        let mut f_w = |wf: &[f64]| {
            let rows: Vec<Vec<f64>> = wf.chunks(d).map(<[f64]>::to_vec).collect();
            let cfg = AamConfig::new_unchecked(scale, margin, rows);
            aam_softmax_loss(&emb_for_w, y, &cfg).expect("valid").value
        };
        let fd_w = central_difference(&mut f_w, &flat_w, FD_STEP);
        max_rel = max_rel.max(gated_max_rel_error(&flat_analytic, &fd_w, GRAD_GATE));
    }
    CheckReport {
        name: "grad-aam".into(),
        trials,
        max_residual: max_rel,
        tolerance: GRAD_TOLERANCE,
    }
}

fn fd_check_embed(
    name: &str,
    trials: usize,
    seed: u64,
    loss: impl Fn(&Embedding, &Embedding) -> Result<(f64, Vec<f64>)>,
) -> CheckReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..trials {
        let d = 8;
        let student = random_embedding(&mut rng, d);
        let teacher = Embedding::new(random_embedding(&mut rng, d)).unwrap();
        let (_, analytic) =
            loss(&Embedding::new(student.clone()).unwrap(), &teacher).expect("valid");
        let mut f = |s: &[f64]| {
            loss(&Embedding::new(s.to_vec()).unwrap(), &teacher)
                .expect("valid")
                .0
        };
        let fd = central_difference(&mut f, &student, FD_STEP);
        max_rel = max_rel.max(gated_max_rel_error(&analytic, &fd, GRAD_GATE));
    }
    CheckReport {
        name: format!("grad-{name}"),
        trials,
        max_residual: max_rel,
        tolerance: GRAD_TOLERANCE,
    }
}

/// Finite-difference check of the full training objective against every
/// network parameter and head weight on a tiny network.
pub fn run_network_gradient_check(trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let spec = MlpSpec::new(vec![4, 5, 3]).unwrap();
    let (c, d) = (4, 3);
    let hyper = AamHyper { scale: 8.0, margin: 0.2 };
    let weights = DistillWeights::default();
    let mut max_rel: f64 = 0.0;

    for trial in 0..trials {
        let mlp = Mlp::init(&spec, seed.wrapping_add(trial as u64).wrapping_mul(0x9e37_79b9));
        let head = random_unit_rows(&mut rng, c, d);
        // A fully dead rectifier layer leaves a zero embedding (biases start
        // at zero); resample the input until the forward pass is alive.
        let x = loop {
            let candidate = random_embedding(&mut rng, 4);
            let emb = mlp.forward(&candidate).expect("valid input");
            if l2_norm(emb.embedding()) > 1e-2 {
                break candidate;
            }
        };
        let y = rng.gen_range(0..c);
        let tau = random_tau(&mut rng);
        let teacher = random_logits(&mut rng, c, 4.0);

        let cfg = AamConfig::new_unchecked(hyper.scale, hyper.margin, head.clone());
        let out = example_objective(
            &mlp,
            &cfg,
            DistillMethod::Trkd,
            &weights,
            tau,
            Some(&teacher),
            None,
            &x,
            y,
        )
        .expect("valid");

        // Flatten (layer weights, layer biases, head) into one vector.
        let mut flat = Vec::new();
        for layer in mlp.layers() {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.biases);
        }
        for row in &head {
            flat.extend_from_slice(row);
        }
        let mut analytic = Vec::new();
        for g in &out.mlp_grads.layers {
            analytic.extend_from_slice(&g.weights);
            analytic.extend_from_slice(&g.biases);
        }
        for row in &out.head_grads {
            analytic.extend_from_slice(row);
        }

        let mut f = |p: &[f64]| {
            let mut net = mlp.clone();
            let mut off = 0;
            for layer in net.layers_mut() {
                let nw = layer.weights.len();
                layer.weights.copy_from_slice(&p[off..off + nw]);
                off += nw;
                let nb = layer.biases.len();
                layer.biases.copy_from_slice(&p[off..off + nb]);
                off += nb;
            }
            let rows: Vec<Vec<f64>> = p[off..].chunks(d).map(<[f64]>::to_vec).collect();
            let cfg = AamConfig::new_unchecked(hyper.scale, hyper.margin, rows);
            example_objective(
                &net,
                &cfg,
                DistillMethod::Trkd,
                &weights,
                tau,
                Some(&teacher),
                None,
                &x,
                y,
            )
            .expect("valid")
            .total
        };
        let fd = central_difference(&mut f, &flat, FD_STEP);
        max_rel = max_rel.max(gated_max_rel_error(&analytic, &fd, GRAD_GATE));
    }
    CheckReport {
        name: "grad-network".into(),
        trials,
        max_residual: max_rel,
        tolerance: NETWORK_GRAD_TOLERANCE,
    }
}

/// The full suite behind the `selfcheck` command. `tamper` injects an
/// artificial residual into the first report (negative-control hook for
/// tests; a healthy build never sets it).
pub fn run_selfcheck(trials: usize, seed: u64, tamper: bool) -> Vec<CheckReport> {
    let grad_trials = (trials / 10).max(25);
    let net_trials = (trials / 100).max(10);
    let mut reports = vec![run_eq6_check(trials, seed), run_eq14_check(trials, seed ^ 0xee)];
    let (val, grad) = run_dkd_trkd_equivalence(trials, seed ^ 0xdd);
    reports.push(val);
    reports.push(grad);
    reports.extend(run_loss_gradient_checks(grad_trials, seed ^ 0xcc));
    reports.push(run_network_gradient_check(net_trials, seed ^ 0xbb));
    if tamper {
        reports[0].max_residual += 1e-6;
    }
    reports
}
