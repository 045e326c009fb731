//! Temperature scaling and bootstrap intervals.
//!
//! The temperature is fit on a seeded held-out calibration subset by
//! minimizing the multiple-choice negative log-likelihood. The search runs
//! in `ln T` over `[0.05, 20]`: a 64-point log-spaced grid locates the
//! basin, then golden-section search refines inside the bracket formed by
//! the best grid point's neighbours.
//!
//! Bootstrap replicates resample example indices jointly for both signals
//! and the labels. Replicate `r` draws from generator stream `r` of the
//! seed, so results do not depend on thread scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::records::shuffled_order;
use crate::rng;
use crate::signals::softmax;

pub const DEFAULT_CALIBRATION_FRACTION: f64 = 0.2;
pub const DEFAULT_CALIBRATION_MINIMUM: usize = 50;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_REPLICATES: usize = 2000;

pub const TEMPERATURE_MIN: f64 = 0.05;
pub const TEMPERATURE_MAX: f64 = 20.0;
pub const TEMPERATURE_GRID_POINTS: usize = 64;
/// Golden-section stops once the bracket is this narrow in `ln T`, i.e.
/// a relative width of about 1e-4 in `T`.
pub const TEMPERATURE_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationSplit {
    /// Sorted ascending.
    pub calibration_indices: Vec<usize>,
    /// Sorted ascending.
    pub evaluation_indices: Vec<usize>,
}

/// Calibration subset size: `min(max(ceil(fraction·n), minimum), n−1)`.
pub fn calibration_size(n: usize, fraction: f64, minimum: usize) -> usize {
    let by_fraction = (fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    by_fraction.max(minimum).min(n - 1).max(1)
}

/// Draws the calibration subset without replacement: the first
/// `calibration_size` positions of the seeded evaluation shuffle.
pub fn split_calibration(
    n: usize,
    fraction: f64,
    minimum: usize,
    seed: u64,
) -> Result<CalibrationSplit> {
    if n < 2 {
        return Err(Error::Domain(format!(
            "calibration split needs at least 2 examples, got {n}"
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!(
            "calibration fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let size = calibration_size(n, fraction, minimum);
    let order = shuffled_order(n, seed)?;
    let mut calibration_indices = order[..size].to_vec();
    let mut evaluation_indices = order[size..].to_vec();
    calibration_indices.sort_unstable();
    evaluation_indices.sort_unstable();
    Ok(CalibrationSplit {
        calibration_indices,
        evaluation_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// Summed negative log-likelihood (nats) on the calibration set at `temperature`.
    pub calibration_nll: f64,
    /// Golden-section iterations performed.
    pub iterations: usize,
}

/// Negative log-likelihood of the gold options over `indices` at temperature `t`.
pub fn temperature_nll(scores: &[Vec<f64>], gold: &[usize], indices: &[usize], t: f64) -> f64 {
    indices
        .iter()
        .map(|&i| {
            let p = softmax(&scores[i], t).expect("scores validated before fitting");
            -p[gold[i]].ln()
        })
        .sum()
}

/// The 64 log-spaced candidate temperatures spanning `[0.05, 20]`.
pub fn temperature_grid() -> Vec<f64> {
    let (lo, hi) = (TEMPERATURE_MIN.ln(), TEMPERATURE_MAX.ln());
    let step = (hi - lo) / (TEMPERATURE_GRID_POINTS - 1) as f64;
    (0..TEMPERATURE_GRID_POINTS)
        .map(|i| {
            if i == TEMPERATURE_GRID_POINTS - 1 {
                TEMPERATURE_MAX
            } else {
                (lo + step * i as f64).exp()
            }
        })
        .collect()
}

/// Fits a single temperature for the averaged option scores.
///
/// On a flat objective the grid point closest to `T = 1` (in `|ln T|`) is
/// returned. The refined value replaces the best grid point only when it
/// is strictly better, and `T = 1` itself is taken if it beats both.
pub fn fit_temperature(
    avg_scores: &[Vec<f64>],
    gold_indices: &[usize],
    calibration_indices: &[usize],
) -> Result<TemperatureFit> {
    if calibration_indices.is_empty() {
        return Err(Error::Domain("empty calibration set".to_string()));
    }
    if avg_scores.len() != gold_indices.len() {
        return Err(Error::Domain(format!(
            "{} score vectors but {} gold indices",
            avg_scores.len(),
            gold_indices.len()
        )));
    }
    for &i in calibration_indices {
        let scores = avg_scores
            .get(i)
            .ok_or_else(|| Error::Domain(format!("calibration index {i} out of range")))?;
        if scores.len() < 2 {
            return Err(Error::Domain(format!(
                "example {i} has fewer than 2 options"
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("example {i} has a non-finite score")));
        }
        if gold_indices[i] >= scores.len() {
            return Err(Error::Domain(format!(
                "example {i} has gold index out of range"
            )));
        }
    }

    let nll =
        |log_t: f64| temperature_nll(avg_scores, gold_indices, calibration_indices, log_t.exp());

    let grid = temperature_grid();
    let values: Vec<f64> = grid.iter().map(|t| nll(t.ln())).collect();
    let mut best = 0;
    for i in 1..grid.len() {
        let closer_to_one = grid[i].ln().abs() < grid[best].ln().abs();
        if values[i] < values[best] || (values[i] == values[best] && closer_to_one) {
            best = i;
        }
    }

    let lo = grid[best.saturating_sub(1)].ln();
    let hi = grid[(best + 1).min(grid.len() - 1)].ln();
    let (refined, iterations) = golden_section(nll, lo, hi, TEMPERATURE_REL_TOL);
    let refined_value = nll(refined);

    let mut fit = TemperatureFit {
        temperature: grid[best],
        calibration_nll: values[best],
        iterations,
    };
    if refined_value < fit.calibration_nll {
        fit.temperature = refined.exp();
        fit.calibration_nll = refined_value;
    }
    let at_one = nll(0.0);
    if at_one < fit.calibration_nll {
        fit.temperature = 1.0;
        fit.calibration_nll = at_one;
    }
    Ok(fit)
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]` until the
/// bracket is narrower than `tol`. Returns the midpoint of the final
/// bracket and the iteration count.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, usize) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iterations = 0;
    while hi - lo > tol && iterations < 200 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        iterations += 1;
    }
    (0.5 * (lo + hi), iterations)
}

/// Linear-interpolation percentile of `values`, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("percentile of an empty list".to_string()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Domain(format!(
            "percentile q must lie in [0, 100], got {q}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    if lo == hi {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean_delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub kept_replicates: usize,
    pub discarded_replicates: usize,
    /// Replicates drawn; discards are not redrawn.
    pub requested_replicates: usize,
    pub seed: u64,
}

/// One bootstrap resample, as seen by an observer.
#[derive(Debug, Clone)]
pub struct ReplicateSample<'a> {
    pub replicate: usize,
    pub indices: &'a [usize],
    pub conf_a: &'a [f64],
    pub conf_b: &'a [f64],
    pub labels: &'a [bool],
}

/// Indices drawn with replacement for replicate `replicate`.
pub fn resample_indices(n: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut g = rng::stream(seed, replicate as u64);
    (0..n)
        .map(|_| rng::below(&mut g, n as u64) as usize)
        .collect()
}

/// Bootstrap distribution of `AUROC(conf_a) − AUROC(conf_b)` on shared labels.
pub fn bootstrap_delta_auroc(
    conf_a: &[f64],
    conf_b: &[f64],
    labels: &[bool],
    replicates: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    bootstrap_delta_auroc_observed(conf_a, conf_b, labels, replicates, seed, |_| {})
}

/// As [`bootstrap_delta_auroc`], calling `observer` with every resample.
/// The observer may be called from several threads in any order.
pub fn bootstrap_delta_auroc_observed<F>(
    conf_a: &[f64],
    conf_b: &[f64],
    labels: &[bool],
    replicates: usize,
    seed: u64,
    observer: F,
) -> Result<BootstrapResult>
where
    F: Fn(&ReplicateSample<'_>) + Sync,
{
    let n = labels.len();
    if conf_a.len() != n || conf_b.len() != n {
        return Err(Error::Domain(format!(
            "length mismatch: {} / {} confidences, {n} labels",
            conf_a.len(),
            conf_b.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n == 0 || n_pos == 0 || n_pos == n {
        return Err(Error::Degenerate(
            "bootstrap needs both label classes".to_string(),
        ));
    }

    let deltas: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let indices = resample_indices(n, seed, r);
            let a: Vec<f64> = indices.iter().map(|&i| conf_a[i]).collect();
            let b: Vec<f64> = indices.iter().map(|&i| conf_b[i]).collect();
            let y: Vec<bool> = indices.iter().map(|&i| labels[i]).collect();
            observer(&ReplicateSample {
                replicate: r,
                indices: &indices,
                conf_a: &a,
                conf_b: &b,
                labels: &y,
            });
            match (metrics::auroc(&a, &y), metrics::auroc(&b, &y)) {
                (Ok(x), Ok(z)) => Some(x - z),
                _ => None,
            }
        })
        .collect();

    let kept: Vec<f64> = deltas.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Statistics(format!(
            "all {replicates} bootstrap replicates were single-class"
        )));
    }
    let mean_delta = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(BootstrapResult {
        mean_delta,
        ci_low: percentile(&kept, 2.5)?,
        ci_high: percentile(&kept, 97.5)?,
        kept_replicates: kept.len(),
        discarded_replicates: replicates - kept.len(),
        requested_replicates: replicates,
        seed,
    })
}
