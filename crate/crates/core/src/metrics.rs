//! Correctness-ranking, selective-prediction and calibration metrics.
//!
//! All selective-prediction quantities share one retention order: examples
//! sorted by decreasing confidence, with equal confidences kept in input
//! (`order_index`) order. Keeping exactly `k` examples means keeping the
//! first `k` of that order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::SignalName;

fn check_inputs(confidences: &[f64], labels: &[bool]) -> Result<()> {
    if confidences.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} confidences but {} labels",
            confidences.len(),
            labels.len()
        )));
    }
    if confidences.is_empty() {
        return Err(Error::Domain("empty input".to_string()));
    }
    if let Some(c) = confidences.iter().find(|c| c.is_nan()) {
        return Err(Error::Domain(format!("confidence {c} is not a number")));
    }
    Ok(())
}

/// Mann–Whitney AUROC: probability that a correct example outranks an
/// incorrect one, ties counted as one half.
///
/// Computed from mid-ranks in `O(n log n)`. The rank sum is accumulated in
/// doubled integer units, so the numerator is exact.
pub fn auroc(confidences: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(confidences, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(
            "AUROC needs both correct and incorrect examples".to_string(),
        ));
    }

    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    idx.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));

    // Sum of doubled mid-ranks (1-based) over positives.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && confidences[idx[end + 1]] == confidences[idx[start]] {
            end += 1;
        }
        // ranks start+1 ..= end+1, doubled mid-rank = start + end + 2
        let twice_mid = (start + end + 2) as u64;
        let pos_in_group = idx[start..=end].iter().filter(|&&i| labels[i]).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        start = end + 1;
    }
    // 2U = 2R - n_pos(n_pos + 1)
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok((twice_u as f64 * 0.5) / ((n_pos * n_neg) as f64))
}

/// Positions sorted by decreasing confidence, ties in input order.
pub fn retention_order(confidences: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    // stable sort keeps input order within ties
    idx.sort_by(|&a, &b| {
        confidences[b]
            .partial_cmp(&confidences[a])
            .unwrap_or(Ordering::Equal)
    });
    idx
}

/// Cumulative error counts along the retention order: entry `k-1` is the
/// number of errors among the top `k`.
fn cumulative_errors(confidences: &[f64], labels: &[bool]) -> Vec<usize> {
    let mut errors = 0;
    retention_order(confidences)
        .into_iter()
        .map(|i| {
            if !labels[i] {
                errors += 1;
            }
            errors
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub coverage: f64,
    pub risk: f64,
}

/// Discrete risk–coverage curve: the `(0, 1)` anchor followed by one point
/// per retained-prefix size `k = 1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverageCurve {
    points: Vec<CurvePoint>,
}

impl RiskCoverageCurve {
    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    /// Area under the curve by the trapezoid rule over consecutive points.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].coverage - w[0].coverage) * (w[0].risk + w[1].risk) / 2.0)
            .sum()
    }
}

pub fn risk_coverage_curve(confidences: &[f64], labels: &[bool]) -> Result<RiskCoverageCurve> {
    check_inputs(confidences, labels)?;
    let n = confidences.len() as f64;
    let mut points = Vec::with_capacity(confidences.len() + 1);
    points.push(CurvePoint {
        coverage: 0.0,
        risk: 1.0,
    });
    for (k0, &errors) in cumulative_errors(confidences, labels).iter().enumerate() {
        let k = (k0 + 1) as f64;
        points.push(CurvePoint {
            coverage: k / n,
            risk: errors as f64 / k,
        });
    }
    Ok(RiskCoverageCurve { points })
}

pub fn aurc(curve: &RiskCoverageCurve) -> f64 {
    curve.area()
}

/// Number of retained examples for a coverage target: `ceil(target · n)`.
///
/// The product is nudged down by 1e-9 before rounding up so that targets
/// like 0.7 on n = 10 (which evaluates to 7.000000000000001) keep 7.
pub fn retained_count(target: f64, n: usize) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Domain(format!(
            "coverage target must lie in (0, 1], got {target}"
        )));
    }
    let k = (target * n as f64 - 1e-9).ceil() as usize;
    Ok(k.clamp(1, n))
}

/// Error rate among the `ceil(target · n)` most confident examples.
pub fn err_at_coverage(confidences: &[f64], labels: &[bool], target: f64) -> Result<f64> {
    check_inputs(confidences, labels)?;
    let k = retained_count(target, confidences.len())?;
    let errors = cumulative_errors(confidences, labels)[k - 1];
    Ok(errors as f64 / k as f64)
}

/// Largest coverage `k / n` whose retained-prefix risk is at most
/// `max_risk`; 0 when no prefix qualifies.
pub fn cov_at_error(confidences: &[f64], labels: &[bool], max_risk: f64) -> Result<f64> {
    check_inputs(confidences, labels)?;
    if !(0.0..=1.0).contains(&max_risk) {
        return Err(Error::Domain(format!(
            "risk target must lie in [0, 1], got {max_risk}"
        )));
    }
    let n = confidences.len();
    let best = cumulative_errors(confidences, labels)
        .iter()
        .enumerate()
        .filter(|&(k0, &errors)| errors as f64 / (k0 + 1) as f64 <= max_risk)
        .map(|(k0, _)| k0 + 1)
        .max()
        .unwrap_or(0);
    Ok(best as f64 / n as f64)
}

pub fn brier(confidences: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(confidences, labels)?;
    let total: f64 = confidences
        .iter()
        .zip(labels)
        .map(|(&c, &y)| {
            let d = c - if y { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(total / confidences.len() as f64)
}

/// Expected calibration error over `bins` equal-width bins
/// `[(b-1)/B, b/B)`, the last bin closed at 1.
pub fn ece(confidences: &[f64], labels: &[bool], bins: usize) -> Result<f64> {
    check_inputs(confidences, labels)?;
    if bins == 0 {
        return Err(Error::Domain("ECE needs at least one bin".to_string()));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut correct = vec![0usize; bins];
    for (&c, &y) in confidences.iter().zip(labels) {
        let b = ((c * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        if y {
            correct[b] += 1;
        }
    }
    let n = confidences.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n) * (correct[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

/// Value of one operating point, e.g. error at 80% coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub target: f64,
    pub value: f64,
}

/// Scalar metrics for one (dataset, model, prompt, signal) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub model: String,
    pub prompt: String,
    pub signal: SignalName,
    pub n_examples: usize,
    /// LL-AVG accuracy of the whole run, repeated on every row.
    pub accuracy_llavg: f64,
    /// Accuracy under this signal's own labels.
    pub accuracy: f64,
    /// `None` when only one label class is present.
    pub auroc: Option<f64>,
    pub aurc: f64,
    pub brier: f64,
    pub ece10: f64,
    pub err_at_coverage: Vec<OperatingPoint>,
    pub cov_at_risk: Vec<OperatingPoint>,
}

impl MetricReport {
    pub fn err_at(&self, target: f64) -> Option<f64> {
        self.err_at_coverage
            .iter()
            .find(|p| p.target == target)
            .map(|p| p.value)
    }

    pub fn cov_at(&self, max_risk: f64) -> Option<f64> {
        self.cov_at_risk
            .iter()
            .find(|p| p.target == max_risk)
            .map(|p| p.value)
    }
}

/// Identity of a report row.
#[derive(Debug, Clone, Copy)]
pub struct ReportKey<'a> {
    pub dataset: &'a str,
    pub model: &'a str,
    pub prompt: &'a str,
}

/// Computes every metric of a report row from one signal's confidences
/// and labels.
pub fn compute_report(
    key: ReportKey<'_>,
    signal: SignalName,
    confidences: &[f64],
    labels: &[bool],
    accuracy_llavg: f64,
    coverage_targets: &[f64],
    risk_targets: &[f64],
) -> Result<MetricReport> {
    check_inputs(confidences, labels)?;
    let auroc = match auroc(confidences, labels) {
        Ok(v) => Some(v),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let curve = risk_coverage_curve(confidences, labels)?;
    let err_at_coverage = coverage_targets
        .iter()
        .map(|&t| {
            err_at_coverage(confidences, labels, t).map(|value| OperatingPoint { target: t, value })
        })
        .collect::<Result<Vec<_>>>()?;
    let cov_at_risk = risk_targets
        .iter()
        .map(|&t| {
            cov_at_error(confidences, labels, t).map(|value| OperatingPoint { target: t, value })
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = labels.iter().filter(|&&y| y).count();
    Ok(MetricReport {
        dataset: key.dataset.to_string(),
        model: key.model.to_string(),
        prompt: key.prompt.to_string(),
        signal,
        n_examples: labels.len(),
        accuracy_llavg,
        accuracy: correct as f64 / labels.len() as f64,
        auroc,
        aurc: curve.area(),
        brier: brier(confidences, labels)?,
        ece10: ece(confidences, labels, 10)?,
        err_at_coverage,
        cov_at_risk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(curve: &RiskCoverageCurve) -> Vec<(f64, f64)> {
        curve
            .points()
            .iter()
            .map(|p| (p.coverage, p.risk))
            .collect()
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(
            auroc(&[0.4; 5], &[true, false, true, true, false]).unwrap(),
            0.5
        );
        assert_eq!(
            auroc(&[0.8, 0.7, 0.6, 0.5], &[true, false, true, false]).unwrap(),
            0.75
        );
    }

    #[test]
    fn auroc_single_class_is_degenerate() {
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(auroc(&[0.1], &[false]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn auroc_rejects_mismatched_lengths() {
        assert!(matches!(auroc(&[0.1, 0.2], &[true]), Err(Error::Domain(_))));
    }

    #[test]
    fn curve_examples() {
        let c = risk_coverage_curve(&[0.9, 0.1], &[true, false]).unwrap();
        assert_eq!(pts(&c), vec![(0.0, 1.0), (0.5, 0.0), (1.0, 0.5)]);
        assert_eq!(aurc(&c), 0.375);

        let c = risk_coverage_curve(&[0.3; 5], &[true; 5]).unwrap();
        assert_eq!(
            pts(&c),
            vec![
                (0.0, 1.0),
                (0.2, 0.0),
                (0.4, 0.0),
                (0.6, 0.0),
                (0.8, 0.0),
                (1.0, 0.0)
            ]
        );
        assert_eq!(aurc(&c), 0.1);

        let c = risk_coverage_curve(&[0.3, 0.6], &[false, false]).unwrap();
        assert_eq!(pts(&c), vec![(0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]);
        assert_eq!(aurc(&c), 1.0);
    }

    #[test]
    fn curve_rejects_empty() {
        assert!(matches!(
            risk_coverage_curve(&[], &[]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn all_wrong_aurc_is_one() {
        for n in 1..40 {
            let c = risk_coverage_curve(&vec![0.5; n], &vec![false; n]).unwrap();
            assert_eq!(aurc(&c), 1.0, "n={n}");
        }
    }

    #[test]
    fn ties_resolve_by_input_order() {
        // equal confidences: first-listed example is retained first
        let c = risk_coverage_curve(&[0.5, 0.5], &[false, true]).unwrap();
        assert_eq!(pts(&c), vec![(0.0, 1.0), (0.5, 1.0), (1.0, 0.5)]);
    }

    #[test]
    fn operating_point_examples() {
        let c = [0.9, 0.8, 0.7, 0.6];
        let y = [true, false, true, true];
        assert_eq!(err_at_coverage(&c, &y, 0.5).unwrap(), 0.5);
        assert_eq!(err_at_coverage(&c, &y, 1.0).unwrap(), 0.25);
        assert_eq!(err_at_coverage(&[0.2], &[false], 0.5).unwrap(), 1.0);
        assert!(err_at_coverage(&c, &y, 0.0).is_err());
        assert!(err_at_coverage(&c, &y, 1.5).is_err());

        assert_eq!(cov_at_error(&c, &y, 0.25).unwrap(), 1.0);
        assert_eq!(cov_at_error(&c, &y, 0.1).unwrap(), 0.25);
        assert_eq!(
            cov_at_error(&[0.9, 0.1], &[false, false], 0.2).unwrap(),
            0.0
        );
    }

    #[test]
    fn retained_count_is_ceiling() {
        assert_eq!(retained_count(0.7, 10).unwrap(), 7);
        assert_eq!(retained_count(0.8, 5).unwrap(), 4);
        assert_eq!(retained_count(0.8, 6).unwrap(), 5);
        assert_eq!(retained_count(0.5, 1).unwrap(), 1);
        assert_eq!(retained_count(0.01, 3).unwrap(), 1);
        assert_eq!(retained_count(1.0, 1234).unwrap(), 1234);
        for n in 1usize..500 {
            for pct in 1..=100 {
                let t = pct as f64 / 100.0;
                let exact = (pct * n).div_ceil(100);
                assert_eq!(retained_count(t, n).unwrap(), exact, "t={t} n={n}");
            }
        }
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0], &[true]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5, 0.5], &[true, false]).unwrap(), 0.25);
        assert_eq!(brier(&[0.0], &[true]).unwrap(), 1.0);
    }

    #[test]
    fn ece_examples() {
        assert_eq!(
            ece(&[0.75; 4], &[true, true, true, false], 10).unwrap(),
            0.0
        );
        assert_eq!(ece(&[0.95, 0.95], &[false, false], 10).unwrap(), 0.95);
        assert!(matches!(ece(&[0.5], &[true], 0), Err(Error::Domain(_))));
        // confidence exactly 1.0 lands in the closed final bin
        assert_eq!(ece(&[1.0], &[true], 10).unwrap(), 0.0);
    }

    #[test]
    fn ece_perfectly_calibrated_bins() {
        // bin centres 0.05..0.95 with matching accuracy out of 20 each
        let mut c = Vec::new();
        let mut y = Vec::new();
        for b in 0..10 {
            let conf = 0.05 + 0.1 * b as f64;
            let correct = (conf * 20.0).round() as usize;
            for i in 0..20 {
                c.push(conf);
                y.push(i < correct);
            }
        }
        assert!(ece(&c, &y, 10).unwrap() < 1e-12);
    }

    #[test]
    fn aurc_perfect_ranking_is_minimal_exhaustive() {
        // all orderings of the label multiset, n <= 7
        fn permutations(items: &mut Vec<bool>, k: usize, out: &mut Vec<Vec<bool>>) {
            if k == items.len() {
                out.push(items.clone());
                return;
            }
            for i in k..items.len() {
                items.swap(k, i);
                permutations(items, k + 1, out);
                items.swap(k, i);
            }
        }
        for n in 1..=7usize {
            for n_correct in 0..=n {
                let mut labels: Vec<bool> = (0..n).map(|i| i < n_correct).collect();
                let conf: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
                let best = aurc(&risk_coverage_curve(&conf, &labels).unwrap());
                let mut all = Vec::new();
                permutations(&mut labels, 0, &mut all);
                for perm in all {
                    let other = aurc(&risk_coverage_curve(&conf, &perm).unwrap());
                    assert!(best <= other + 1e-15, "n={n} {perm:?}");
                }
            }
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..8).prop_map(|v| v as f64 / 8.0), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn cov_at_error_monotone((c, y) in instance(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(cov_at_error(&c, &y, lo).unwrap() <= cov_at_error(&c, &y, hi).unwrap());
        }

        #[test]
        fn full_coverage_error_is_one_minus_accuracy((c, y) in instance()) {
            let acc = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
            prop_assert!((err_at_coverage(&c, &y, 1.0).unwrap() - (1.0 - acc)).abs() < 1e-15);
        }

        #[test]
        fn brier_ece_order_invariant((c, y) in instance(), seed in any::<u64>()) {
            let mut idx: Vec<usize> = (0..c.len()).collect();
            let mut rng = crate::rng::seeded(seed);
            crate::rng::shuffle(&mut rng, &mut idx);
            let c2: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
            let y2: Vec<bool> = idx.iter().map(|&i| y[i]).collect();
            prop_assert!((brier(&c, &y).unwrap() - brier(&c2, &y2).unwrap()).abs() < 1e-12);
            prop_assert!((ece(&c, &y, 10).unwrap() - ece(&c2, &y2, 10).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn metrics_in_unit_interval((c, y) in instance()) {
            let curve = risk_coverage_curve(&c, &y).unwrap();
            let a = aurc(&curve);
            prop_assert!((0.0..=1.0).contains(&a));
            if let Ok(v) = auroc(&c, &y) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((0.0..=1.0).contains(&ece(&c, &y, 10).unwrap()));
        }
    }
}
