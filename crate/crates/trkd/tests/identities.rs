//! Property-based invariants over randomized inputs: probability-space
//! laws, partition structure, loss shift-invariance, and EER conventions.

mod common;

use proptest::prelude::*;
use trkd::distill::{dkd_loss, kd_loss, trkd_loss, DistillWeights};
use trkd::eval::{compute_eer, TrialScoreSet};
use trkd::partition::build_partition;
use trkd::prob::{kl_divergence, softmax, temperature_scale, LogitVector};

fn logit_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-8.0f64..8.0, len)
}

/// Two logit vectors of one shared length.
fn logit_pair(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(-8.0f64..8.0, n),
            prop::collection::vec(-8.0f64..8.0, n),
        )
    })
}

fn lv(values: &[f64]) -> LogitVector {
    LogitVector::new(values.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn gibbs_inequality((z1, z2) in logit_pair(2..40)) {
        let p = softmax(&lv(&z1));
        let q = softmax(&lv(&z2));
        let kl = kl_divergence(&p, &q).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(kl_divergence(&p, &p).unwrap() <= 1e-12);
        // Distinguishable distributions have strictly positive divergence.
        let gap = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > 1e-6 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn softmax_shift_invariance(z in logit_vec(2..40), c in -50.0f64..50.0) {
        let base = softmax(&lv(&z));
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let moved = softmax(&lv(&shifted));
        for (a, b) in base.probs().iter().zip(moved.probs()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_probs_consistent_with_probs(z in logit_vec(2..40)) {
        let p = softmax(&lv(&z));
        for (&prob, &lp) in p.probs().iter().zip(p.log_probs()) {
            if prob > 1e-300 {
                prop_assert!((lp.exp() - prob).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn temperature_softening_is_monotone(z in logit_vec(2..30), t1 in 0.5f64..4.0, extra in 0.1f64..8.0) {
        let t2 = t1 + extra;
        let z = lv(&z);
        let sharp = softmax(&temperature_scale(&z, t1).unwrap());
        let soft = softmax(&temperature_scale(&z, t2).unwrap());
        let max_sharp = sharp.probs().iter().fold(0.0f64, |a, &b| a.max(b));
        let max_soft = soft.probs().iter().fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(max_soft <= max_sharp + 1e-12);
    }

    #[test]
    fn partition_structure(z in logit_vec(3..13), y_pick in 0usize..12, tau1 in 1e-6f64..1.0, tau2 in 1e-6f64..1.0) {
        let y = y_pick % z.len();
        let p = softmax(&lv(&z));
        let (lo, hi) = if tau1 <= tau2 { (tau1, tau2) } else { (tau2, tau1) };

        // Completeness: every class in exactly one part.
        let part = build_partition(&p, y, hi).unwrap();
        let mut seen = vec![0u8; z.len()];
        seen[part.target()] += 1;
        for &i in part.confusion_set() { seen[i] += 1; }
        for &i in part.background_set() { seen[i] += 1; }
        prop_assert!(seen.iter().all(|&s| s == 1));

        // Descending-order cut: min confusion prob >= max background prob.
        if !part.background_set().is_empty() {
            let min_f = part.confusion_set().iter().map(|&i| p.probs()[i]).fold(f64::INFINITY, f64::min);
            let max_b = part.background_set().iter().map(|&i| p.probs()[i]).fold(0.0f64, f64::max);
            prop_assert!(min_f >= max_b);
        }

        // Cardinality matches the exhaustive-subset oracle.
        let oracle = common::brute_force_min_subset_size(p.probs(), y, hi);
        prop_assert_eq!(part.confusion_set().len(), oracle);

        // Monotonicity: confusion at lo is a subset of confusion at hi.
        let small = build_partition(&p, y, lo).unwrap();
        for i in small.confusion_set() {
            prop_assert!(part.confusion_set().contains(i));
        }

        // Mass bookkeeping.
        let total = part.teacher_mass_target()
            + part.teacher_mass_confusion()
            + part.teacher_mass_background();
        prop_assert!((total - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn tau_one_degenerates_to_target_rest(z in logit_vec(3..30), y_pick in 0usize..29) {
        let y = y_pick % z.len();
        let p = softmax(&lv(&z));
        let part = build_partition(&p, y, 1.0).unwrap();
        prop_assert!(part.background_set().is_empty());
        prop_assert_eq!(part.confusion_set().len(), z.len() - 1);
        let masses = trkd::partition::three_mass_vector(&p, &part).unwrap();
        prop_assert_eq!(masses.num_classes(), 2);
        prop_assert!((masses.probs()[0] - p.probs()[y]).abs() <= 1e-15);
    }

    #[test]
    fn losses_shift_invariant_and_grad_sums_zero(
        (zt, zs) in logit_pair(3..20),
        shift in -20.0f64..20.0,
        y_pick in 0usize..19,
        tau in 1e-3f64..1.0,
    ) {
        let y = y_pick % zt.len();
        let w = DistillWeights::default();
        let teacher = lv(&zt);
        let student = lv(&zs);
        let shifted = lv(&zs.iter().map(|v| v + shift).collect::<Vec<_>>());

        for (a, b) in [
            (kd_loss(&teacher, &student, &w).unwrap(), kd_loss(&teacher, &shifted, &w).unwrap()),
            (dkd_loss(&teacher, &student, y, &w).unwrap(), dkd_loss(&teacher, &shifted, y, &w).unwrap()),
            (trkd_loss(&teacher, &student, y, tau, &w).unwrap(), trkd_loss(&teacher, &shifted, y, tau, &w).unwrap()),
        ] {
            prop_assert!((a.value - b.value).abs() <= 1e-10, "shift moved value by {}", (a.value - b.value).abs());
            let sum: f64 = a.grad_student_logits.iter().sum();
            prop_assert!(sum.abs() <= 1e-9);
            prop_assert!(a.value >= 0.0);
        }
    }

    #[test]
    fn eer_in_range_and_matches_oracle(
        targets in prop::collection::vec(-3.0f64..3.0, 1..20),
        nontargets in prop::collection::vec(-3.0f64..3.0, 1..20),
    ) {
        let set = TrialScoreSet {
            target_scores: targets.clone(),
            nontarget_scores: nontargets.clone(),
            skipped_classes: 0,
        };
        let eer = compute_eer(&set).unwrap();
        prop_assert!((0.0..=1.0).contains(&eer));
        let oracle = common::exhaustive_eer(&targets, &nontargets);
        prop_assert_eq!(eer, oracle);
    }
}
