//! OOD evaluation metrics: FPR at 95% TPR, AUC, and score histograms.
//!
//! Conventions (normative for this crate): the detection threshold λ is the
//! smallest observed ID score whose lower-tail fraction reaches 0.95, ties
//! in AUC count half, and histogram bins are left-closed/right-open with the
//! final bin closed. Both metrics are rank statistics, so any strictly
//! increasing transform of the scores leaves them unchanged.

use crate::error::{Error, Result};

/// Where a score sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOrigin {
    Id,
    Ood,
}

/// One scored test sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSample {
    pub score: f64,
    pub origin: SampleOrigin,
}

/// Summary of one ID-versus-OOD evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fpr95: f64,
    pub auc: f64,
    pub lambda: f64,
    pub id_count: usize,
    pub ood_count: usize,
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::contract(format!("{name} scores must be non-empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{name} scores")));
    }
    Ok(())
}

/// False-positive rate at 95% true-positive rate.
///
/// λ is the smallest empirical ID score accepting at least 95% of ID
/// samples (`score ≤ λ` means "accepted as ID"); the returned FPR is the
/// fraction of OOD scores that also pass. Returns `(fpr95, λ)`.
pub fn fpr_at_95_tpr(id_scores: &[f64], ood_scores: &[f64]) -> Result<(f64, f64)> {
    check_scores("ID", id_scores)?;
    check_scores("OOD", ood_scores)?;
    let n = id_scores.len();
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    // smallest m with m/n ≥ 0.95, in exact integer arithmetic
    let m = (95 * n).div_ceil(100);
    let lambda = sorted[m - 1];
    let fp = ood_scores.iter().filter(|&&s| s <= lambda).count();
    Ok((fp as f64 / ood_scores.len() as f64, lambda))
}

/// Rank-based AUC: `P(S_ood > S_id) + ½·P(S_ood = S_id)`. OOD is the
/// detection-positive class, so perfectly separated inputs give 1.0.
pub fn auc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores("ID", id_scores)?;
    check_scores("OOD", ood_scores)?;
    let mut ood = ood_scores.to_vec();
    ood.sort_by(f64::total_cmp);
    let mut twice_wins: u128 = 0;
    for &s in id_scores {
        let below = ood.partition_point(|&o| o < s);
        let at_or_below = ood.partition_point(|&o| o <= s);
        let greater = ood.len() - at_or_below;
        let equal = at_or_below - below;
        twice_wins += 2 * greater as u128 + equal as u128;
    }
    let total = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    Ok(twice_wins as f64 / total as f64)
}

/// Computes both metrics at once.
pub fn evaluate(id_scores: &[f64], ood_scores: &[f64]) -> Result<MetricReport> {
    let (fpr95, lambda) = fpr_at_95_tpr(id_scores, ood_scores)?;
    let auc = auc(id_scores, ood_scores)?;
    Ok(MetricReport {
        fpr95,
        auc,
        lambda,
        id_count: id_scores.len(),
        ood_count: ood_scores.len(),
    })
}

/// Histogram export: shared bin edges plus per-origin counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges spanning the range.
    pub edges: Vec<f64>,
    pub id_counts: Vec<usize>,
    pub ood_counts: Vec<usize>,
}

/// Bins scores into `bins` equal-width buckets over `range` (derived from
/// the data when absent). Bins are left-closed and right-open except the
/// last, which is closed; samples outside an explicit range are dropped.
pub fn histogram(
    samples: &[ScoreSample],
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::contract("histogram needs at least one bin"));
    }
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite("histogram scores".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::contract(format!(
                    "invalid histogram range [{lo}, {hi}]"
                )));
            }
            (lo, hi)
        }
        None => {
            if samples.is_empty() {
                return Err(Error::contract(
                    "cannot derive a histogram range from no samples",
                ));
            }
            let lo = samples.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
            let hi = samples
                .iter()
                .map(|s| s.score)
                .fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        }
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut id_counts = vec![0usize; bins];
    let mut ood_counts = vec![0usize; bins];
    for s in samples {
        if s.score < lo || s.score > hi {
            continue;
        }
        let idx = (((s.score - lo) / width) as usize).min(bins - 1);
        match s.origin {
            SampleOrigin::Id => id_counts[idx] += 1,
            SampleOrigin::Ood => ood_counts[idx] += 1,
        }
    }
    Ok(Histogram {
        edges,
        id_counts,
        ood_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive threshold sweep: try every ID score as λ and keep the
    /// smallest one that accepts ≥ 95% of ID samples.
    fn fpr95_oracle(id: &[f64], ood: &[f64]) -> (f64, f64) {
        let mut candidates = id.to_vec();
        candidates.sort_by(f64::total_cmp);
        let n = id.len() as f64;
        for &lambda in &candidates {
            let tpr = id.iter().filter(|&&s| s <= lambda).count() as f64 / n;
            if tpr >= 0.95 {
                let fpr = ood.iter().filter(|&&s| s <= lambda).count() as f64 / ood.len() as f64;
                return (fpr, lambda);
            }
        }
        unreachable!("the largest ID score always accepts everything");
    }

    /// All-pairs AUC oracle.
    fn auc_oracle(id: &[f64], ood: &[f64]) -> f64 {
        let mut total = 0.0;
        for &i in id {
            for &o in ood {
                if o > i {
                    total += 1.0;
                } else if o == i {
                    total += 0.5;
                }
            }
        }
        total / (id.len() * ood.len()) as f64
    }

    #[test]
    fn fpr95_separated_is_zero() {
        let id: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ood: Vec<f64> = (0..20).map(|i| 100.0 + i as f64).collect();
        let (fpr, lambda) = fpr_at_95_tpr(&id, &ood).unwrap();
        assert_eq!(fpr, 0.0);
        assert_eq!(lambda, 18.0); // 19th smallest of 0..20
    }

    #[test]
    fn fpr95_all_equal_is_one() {
        let id = vec![3.0; 10];
        let ood = vec![3.0; 7];
        let (fpr, lambda) = fpr_at_95_tpr(&id, &ood).unwrap();
        assert_eq!(lambda, 3.0);
        assert_eq!(fpr, 1.0);
    }

    #[test]
    fn fpr95_matches_sweep_oracle_on_hand_lists() {
        let id = vec![
            0.1, 0.5, 0.2, 0.9, 0.3, 0.8, 0.4, 0.6, 0.7, 1.0, 1.1, 0.15, 0.25, 0.35, 0.45, 0.55,
            0.65, 0.75, 0.85, 0.95,
        ];
        let ood = vec![
            0.9, 1.4, 0.7, 1.2, 1.3, 0.6, 1.5, 1.6, 1.7, 0.8, 1.8, 1.9, 2.0, 2.1, 2.2, 0.5, 2.3,
            2.4, 2.5, 2.6,
        ];
        let (fpr, lambda) = fpr_at_95_tpr(&id, &ood).unwrap();
        let (fpr_o, lambda_o) = fpr95_oracle(&id, &ood);
        assert_eq!(fpr, fpr_o);
        assert_eq!(lambda, lambda_o);
    }

    #[test]
    fn auc_trivial_values() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(auc(&a, &a).unwrap(), 0.5);
        let lo = vec![0.0, 0.1, 0.2];
        let hi = vec![1.0, 1.1, 1.2];
        assert_eq!(auc(&lo, &hi).unwrap(), 1.0);
        assert_eq!(auc(&hi, &lo).unwrap(), 0.0);
    }

    #[test]
    fn auc_matches_pairwise_oracle_on_hand_lists() {
        let id = vec![0.3, 0.7, 0.2, 0.7, 0.9];
        let ood = vec![0.5, 0.7, 1.0, 0.2, 1.3];
        let got = auc(&id, &ood).unwrap();
        let expected = auc_oracle(&id, &ood);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(fpr_at_95_tpr(&[], &[1.0]).is_err());
        assert!(fpr_at_95_tpr(&[1.0], &[]).is_err());
        assert!(auc(&[], &[1.0]).is_err());
        assert!(auc(&[1.0], &[]).is_err());
    }

    #[test]
    fn histogram_basics() {
        let one = [ScoreSample {
            score: 0.5,
            origin: SampleOrigin::Id,
        }];
        let h = histogram(&one, 1, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.id_counts, vec![1]);
        assert_eq!(h.ood_counts, vec![0]);
        assert_eq!(h.edges, vec![0.0, 1.0]);
    }

    #[test]
    fn histogram_edge_samples_go_right_except_maximum() {
        let samples: Vec<ScoreSample> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&score| ScoreSample {
                score,
                origin: SampleOrigin::Ood,
            })
            .collect();
        let h = histogram(&samples, 2, Some((0.0, 1.0))).unwrap();
        // 0.0 → bin 0, 0.5 → bin 1 (right of the shared edge), 1.0 → last bin
        assert_eq!(h.ood_counts, vec![1, 2]);
    }

    #[test]
    fn histogram_counts_match_naive_loop() {
        let mut samples = Vec::new();
        for i in 0..100 {
            let score = (i as f64 * 37.0) % 10.0;
            samples.push(ScoreSample {
                score,
                origin: if i % 3 == 0 {
                    SampleOrigin::Ood
                } else {
                    SampleOrigin::Id
                },
            });
        }
        let bins = 10;
        let (lo, hi) = (0.0, 10.0);
        let h = histogram(&samples, bins, Some((lo, hi))).unwrap();
        let mut id_naive = vec![0usize; bins];
        let mut ood_naive = vec![0usize; bins];
        for s in &samples {
            let mut idx = bins - 1;
            for b in 0..bins {
                let left = lo + (hi - lo) * b as f64 / bins as f64;
                let right = lo + (hi - lo) * (b + 1) as f64 / bins as f64;
                if s.score >= left && (s.score < right || b == bins - 1) {
                    idx = b;
                    break;
                }
            }
            match s.origin {
                SampleOrigin::Id => id_naive[idx] += 1,
                SampleOrigin::Ood => ood_naive[idx] += 1,
            }
        }
        assert_eq!(h.id_counts, id_naive);
        assert_eq!(h.ood_counts, ood_naive);
        let total: usize = h.id_counts.iter().chain(h.ood_counts.iter()).sum();
        assert_eq!(total, samples.len());
    }

    #[test]
    fn histogram_rejects_bad_inputs() {
        let s = [ScoreSample {
            score: 1.0,
            origin: SampleOrigin::Id,
        }];
        assert!(histogram(&s, 0, None).is_err());
        assert!(histogram(&s, 2, Some((1.0, 1.0))).is_err());
        assert!(histogram(&[], 2, None).is_err());
    }

    proptest! {
        #[test]
        fn metrics_match_oracles(
            id in proptest::collection::vec(-50i32..50, 1..50),
            ood in proptest::collection::vec(-50i32..50, 1..50),
        ) {
            // integer-valued scores exercise heavy tie handling
            let id: Vec<f64> = id.into_iter().map(|v| v as f64 / 4.0).collect();
            let ood: Vec<f64> = ood.into_iter().map(|v| v as f64 / 4.0).collect();
            let (fpr, lambda) = fpr_at_95_tpr(&id, &ood).unwrap();
            let (fpr_o, lambda_o) = fpr95_oracle(&id, &ood);
            prop_assert_eq!(fpr, fpr_o);
            prop_assert_eq!(lambda, lambda_o);
            let a = auc(&id, &ood).unwrap();
            let a_o = auc_oracle(&id, &ood);
            prop_assert!((a - a_o).abs() < 1e-12);
        }

        #[test]
        fn metrics_invariant_under_monotone_transforms(
            id in proptest::collection::vec(-40i32..40, 1..40),
            ood in proptest::collection::vec(-40i32..40, 1..40),
            scale in 1u32..8,
            shift in -20i32..20,
        ) {
            let id: Vec<f64> = id.into_iter().map(|v| v as f64).collect();
            let ood: Vec<f64> = ood.into_iter().map(|v| v as f64).collect();
            // x³ is strictly increasing and exact on these integer grids, as
            // is any positive affine map
            let transforms: [Box<dyn Fn(f64) -> f64>; 2] = [
                Box::new(|v: f64| v * v * v),
                Box::new(move |v: f64| scale as f64 * v + shift as f64),
            ];
            for transform in &transforms {
                let tid: Vec<f64> = id.iter().map(|&v| transform(v)).collect();
                let tood: Vec<f64> = ood.iter().map(|&v| transform(v)).collect();
                prop_assert_eq!(
                    fpr_at_95_tpr(&id, &ood).unwrap().0,
                    fpr_at_95_tpr(&tid, &tood).unwrap().0
                );
                prop_assert_eq!(auc(&id, &ood).unwrap(), auc(&tid, &tood).unwrap());
            }
        }

        #[test]
        fn auc_role_swap_sums_to_one_without_ties(
            base in proptest::collection::hash_set(-1000i32..1000, 2..60),
        ) {
            // split a duplicate-free set so the two sides share no value
            let values: Vec<f64> = base.into_iter().map(|v| v as f64).collect();
            let mid = values.len() / 2;
            prop_assume!(mid >= 1);
            let id = &values[..mid];
            let ood = &values[mid..];
            let forward = auc(id, ood).unwrap();
            let swapped = auc(ood, id).unwrap();
            prop_assert!((forward + swapped - 1.0).abs() < 1e-12);
        }
    }
}
