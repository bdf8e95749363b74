//! Independent brute-force oracles shared by the property and acceptance
//! suites. Nothing here calls into the implementation paths it judges.

/// Minimal cardinality over ALL subsets of non-targets whose mass reaches
/// `tau` (exhaustive enumeration; all non-targets if none reaches).
pub fn brute_force_min_subset_size(probs: &[f64], y: usize, tau: f64) -> usize {
    let non_targets: Vec<usize> = (0..probs.len()).filter(|&i| i != y).collect();
    let n = non_targets.len();
    assert!(n <= 20, "exhaustive enumeration only for small class counts");
    let mut best: Option<usize> = None;
    for mask in 1u32..(1u32 << n) {
        let mass: f64 = non_targets
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, &i)| probs[i])
            .sum();
        if mass >= tau {
            let k = mask.count_ones() as usize;
            best = Some(best.map_or(k, |b| b.min(k)));
        }
    }
    best.unwrap_or(n)
}

/// Exhaustive threshold-enumeration EER: direct counting at every distinct
/// score, bracketing the sign change of FAR - FRR, same interpolation
/// arithmetic as the ROC convention under test.
pub fn exhaustive_eer(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let frr = |t: f64| {
        targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64
    };
    let far = |t: f64| {
        nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64
    };

    let mut points = vec![(1.0f64, 0.0f64)];
    for &t in &thresholds {
        points.push((far(t), frr(t)));
    }
    points.push((0.0, 1.0));

    for pair in points.windows(2) {
        let (far1, frr1) = pair[0];
        let (far2, frr2) = pair[1];
        let d1 = far1 - frr1;
        let d2 = far2 - frr2;
        if d1 >= 0.0 && d2 <= 0.0 {
            if d1 == d2 {
                return frr1;
            }
            let u = d1 / (d1 - d2);
            return frr1 + u * (frr2 - frr1);
        }
    }
    unreachable!("sign change must exist");
}
