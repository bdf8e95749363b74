//! Verification-style evaluation: same/different-class trials scored by
//! cosine similarity, and the equal error rate of the resulting score set.
//!
//! ROC convention: at threshold `t`, the false-rejection rate is the
//! fraction of target scores strictly below `t`, the false-acceptance rate
//! is the fraction of non-target scores at or above `t`. The EER is read
//! off by linear interpolation between the two adjacent ROC points where
//! `FAR - FRR` changes sign.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::aux_losses::l2_norm;
use crate::error::{Error, Result};

/// Labeled similarity scores for a verification trial list.
#[derive(Debug, Clone, Default)]
pub struct TrialScoreSet {
    pub target_scores: Vec<f64>,
    pub nontarget_scores: Vec<f64>,
    /// Classes skipped because they had fewer than two examples.
    pub skipped_classes: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na <= 0.0 || nb <= 0.0 {
        return Err(Error::DegenerateInput(
            "zero-norm embedding in trial scoring".into(),
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Build a balanced trial list from labeled embeddings: per class, up to
/// `pairs_per_class` same-class pairs and as many cross-class pairs, all
/// cosine-scored. Sampling is seeded and deterministic. Classes with fewer
/// than two examples generate no pairs of their own and are counted in
/// `skipped_classes` (they may still appear as cross-class partners).
pub fn build_trials(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    pairs_per_class: usize,
    seed: u64,
) -> Result<TrialScoreSet> {
    if embeddings.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    if embeddings.is_empty() || pairs_per_class == 0 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "need at least one embedding and pairs_per_class >= 1".into(),
        });
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(idx);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = TrialScoreSet::default();
    let mut used_cross: HashSet<(usize, usize)> = HashSet::new();
    let total = embeddings.len();

    for (&label, members) in &by_class {
        if members.len() < 2 {
            out.skipped_classes += 1;
            continue;
        }

        // Same-class pairs: enumerate, shuffle, take a prefix.
        let mut same: Vec<(usize, usize)> = Vec::new();
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                same.push((i, j));
            }
        }
        same.shuffle(&mut rng);
        for &(i, j) in same.iter().take(pairs_per_class) {
            out.target_scores.push(cosine(&embeddings[i], &embeddings[j])?);
        }

        // Cross-class pairs: rejection-sample distinct pairs anchored here.
        let available = members.len() * (total - members.len());
        let want = pairs_per_class.min(available);
        let mut produced = 0;
        let mut attempts = 0usize;
        let max_attempts = 100 * pairs_per_class + 100;
        while produced < want && attempts < max_attempts {
            attempts += 1;
            let i = members[rng.gen_range(0..members.len())];
            let j = rng.gen_range(0..total);
            if labels[j] == label {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if !used_cross.insert(key) {
                continue;
            }
            out.nontarget_scores.push(cosine(&embeddings[i], &embeddings[j])?);
            produced += 1;
        }
    }

    Ok(out)
}

/// Equal error rate in [0, 1].
pub fn compute_eer(scores: &TrialScoreSet) -> Result<f64> {
    if scores.target_scores.is_empty() || scores.nontarget_scores.is_empty() {
        return Err(Error::InvalidParameter {
            name: "scores",
            reason: "both target and non-target score lists must be non-empty".into(),
        });
    }
    for &s in scores.target_scores.iter().chain(&scores.nontarget_scores) {
        if !s.is_finite() {
            return Err(Error::InvalidParameter {
                name: "scores",
                reason: format!("non-finite score {s}"),
            });
        }
    }

    let mut targets = scores.target_scores.clone();
    let mut nontargets = scores.nontarget_scores.clone();
    targets.sort_by(f64::total_cmp);
    nontargets.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = targets.iter().chain(&nontargets).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let frr_at = |t: f64| targets.partition_point(|&s| s < t) as f64 / targets.len() as f64;
    let far_at = |t: f64| {
        (nontargets.len() - nontargets.partition_point(|&s| s < t)) as f64
            / nontargets.len() as f64
    };

    // ROC points swept by increasing threshold, bracketed by the two
    // virtual endpoints (all accepted / all rejected).
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push((1.0, 0.0));
    for &t in &thresholds {
        points.push((far_at(t), frr_at(t)));
    }
    points.push((0.0, 1.0));

    for pair in points.windows(2) {
        let (far1, frr1) = pair[0];
        let (far2, frr2) = pair[1];
        let d1 = far1 - frr1;
        let d2 = far2 - frr2;
        if d1 >= 0.0 && d2 <= 0.0 {
            if d1 == d2 {
                return Ok(frr1);
            }
            let u = d1 / (d1 - d2);
            return Ok(frr1 + u * (frr2 - frr1));
        }
    }
    unreachable!("FAR - FRR runs from 1 to -1 over the sweep");
}

/// Write scores as plain text, one `label score` pair per line with label
/// `tgt` or `non`.
pub fn write_score_file(scores: &TrialScoreSet, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for &s in &scores.target_scores {
        writeln!(buf, "tgt {s}").expect("write to vec");
    }
    for &s in &scores.nontarget_scores {
        writeln!(buf, "non {s}").expect("write to vec");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
