//! Per-example confidence signals and correctness labels.
//!
//! Every signal except LL-SUM is scored against the LL-AVG correctness
//! label `y_avg`, because the verification prompt and the auxiliary
//! baselines all describe the answer picked by length-normalized scoring.
//! LL-SUM is scored on its own prediction and carries `y_sum`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{ExampleRecord, ValidatedRun, VerifyLogits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignalName {
    #[serde(rename = "LL-AVG")]
    LlAvg,
    #[serde(rename = "LL-SUM")]
    LlSum,
    #[serde(rename = "Self-Verify")]
    SelfVerify,
    #[serde(rename = "Margin")]
    Margin,
    #[serde(rename = "EntropyConf")]
    EntropyConf,
    #[serde(rename = "LL-AVG-T")]
    LlAvgT,
}

impl SignalName {
    pub const ALL: [SignalName; 6] = [
        SignalName::LlAvg,
        SignalName::LlSum,
        SignalName::SelfVerify,
        SignalName::Margin,
        SignalName::EntropyConf,
        SignalName::LlAvgT,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalName::LlAvg => "LL-AVG",
            SignalName::LlSum => "LL-SUM",
            SignalName::SelfVerify => "Self-Verify",
            SignalName::Margin => "Margin",
            SignalName::EntropyConf => "EntropyConf",
            SignalName::LlAvgT => "LL-AVG-T",
        }
    }

    /// Signals that do not depend on the verification prompt.
    pub fn is_prompt_independent(self) -> bool {
        self != SignalName::SelfVerify
    }
}

impl fmt::Display for SignalName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SignalName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown signal {s:?}")))
    }
}

/// Confidence, prediction and correctness label for every example of a run,
/// in `order_index` order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalFrame {
    pub signal: SignalName,
    pub confidences: Vec<f64>,
    pub predicted_index: Vec<usize>,
    pub labels: Vec<bool>,
}

impl SignalFrame {
    pub fn len(&self) -> usize {
        self.confidences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidences.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        let correct = self.labels.iter().filter(|&&y| y).count();
        correct as f64 / self.labels.len() as f64
    }

    /// Frame restricted to the given example positions.
    pub fn select(&self, indices: &[usize]) -> SignalFrame {
        SignalFrame {
            signal: self.signal,
            confidences: indices.iter().map(|&i| self.confidences[i]).collect(),
            predicted_index: indices.iter().map(|&i| self.predicted_index[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Softmax of `scores / temperature`, shifted by the maximum before
/// exponentiation.
pub fn softmax(scores: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Domain(
            "softmax of an empty score vector".to_string(),
        ));
    }
    if temperature.is_nan() || temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::Domain(format!(
            "softmax temperature must be positive and finite, got {temperature}"
        )));
    }
    if let Some(x) = scores.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite score {x}")));
    }
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log Σ exp(x)`, shifted by the maximum.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn averaged_scores(record: &ExampleRecord) -> Vec<f64> {
    record.options.iter().map(|o| o.average()).collect()
}

pub fn summed_scores(record: &ExampleRecord) -> Vec<f64> {
    record.options.iter().map(|o| o.sum_logprob).collect()
}

fn predict(scores: &[f64], temperature: f64) -> (usize, f64) {
    let probs = softmax(scores, temperature).expect("validated records have finite scores");
    let idx = argmax(scores);
    (idx, probs[idx])
}

/// LL-AVG: argmax of per-token mean log-likelihood, confidence is the
/// winning option's softmax probability.
pub fn ll_avg_signal(record: &ExampleRecord) -> (usize, f64) {
    predict(&averaged_scores(record), 1.0)
}

/// LL-SUM: as [`ll_avg_signal`] over the raw summed log-likelihoods.
pub fn ll_sum_signal(record: &ExampleRecord) -> (usize, f64) {
    predict(&summed_scores(record), 1.0)
}

/// LL-AVG with averaged scores divided by `temperature` before the softmax.
/// The predicted option is unchanged.
pub fn ll_avg_temperature_signal(record: &ExampleRecord, temperature: f64) -> Result<(usize, f64)> {
    let scores = averaged_scores(record);
    let probs = softmax(&scores, temperature)?;
    let idx = argmax(&scores);
    Ok((idx, probs[idx]))
}

/// Self-Verify confidence `σ(logsumexp(true) − logsumexp(false))`.
pub fn self_verify_confidence(v: &VerifyLogits) -> Result<f64> {
    if v.true_logits.is_empty() || v.false_logits.is_empty() {
        return Err(Error::Domain("empty True or False logit set".to_string()));
    }
    if let Some(x) = v
        .true_logits
        .iter()
        .chain(&v.false_logits)
        .find(|x| !x.is_finite())
    {
        return Err(Error::Domain(format!("non-finite verification logit {x}")));
    }
    let l_true = logsumexp(&v.true_logits);
    let l_false = logsumexp(&v.false_logits);
    Ok(sigmoid(l_true - l_false))
}

/// Gap between the two largest probabilities.
pub fn margin_signal(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::Domain(format!(
            "margin needs at least 2 options, got {}",
            probs.len()
        )));
    }
    let (mut top1, mut top2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
    }
    Ok(top1 - top2)
}

/// One minus entropy normalized by `ln K`, with `0·ln 0 = 0`.
pub fn entropy_confidence(probs: &[f64]) -> Result<f64> {
    let k = probs.len();
    if k < 2 {
        return Err(Error::Domain(format!(
            "entropy confidence needs at least 2 options, got {k}"
        )));
    }
    let entropy: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // rounding can leave the ratio a few ulps outside [0, 1]
    Ok((1.0 - entropy / (k as f64).ln()).clamp(0.0, 1.0))
}

/// Builds one frame per requested signal.
///
/// `variant` is required for Self-Verify and `temperature` for LL-AVG-T.
pub fn build_signal_frames(
    run: &ValidatedRun,
    signals: &[SignalName],
    variant: Option<&str>,
    temperature: Option<f64>,
) -> Result<Vec<SignalFrame>> {
    let records = run.records();
    let avg: Vec<(usize, f64)> = records.iter().map(ll_avg_signal).collect();
    let y_avg: Vec<bool> = records
        .iter()
        .zip(&avg)
        .map(|(r, &(pred, _))| pred == r.gold_index)
        .collect();
    let pred_avg: Vec<usize> = avg.iter().map(|&(p, _)| p).collect();

    let with_y_avg = |signal, confidences| SignalFrame {
        signal,
        confidences,
        predicted_index: pred_avg.clone(),
        labels: y_avg.clone(),
    };

    let mut frames = Vec::with_capacity(signals.len());
    for &signal in signals {
        let frame = match signal {
            SignalName::LlAvg => with_y_avg(signal, avg.iter().map(|&(_, c)| c).collect()),
            SignalName::LlSum => {
                let sum: Vec<(usize, f64)> = records.iter().map(ll_sum_signal).collect();
                SignalFrame {
                    signal,
                    confidences: sum.iter().map(|&(_, c)| c).collect(),
                    predicted_index: sum.iter().map(|&(p, _)| p).collect(),
                    labels: records
                        .iter()
                        .zip(&sum)
                        .map(|(r, &(p, _))| p == r.gold_index)
                        .collect(),
                }
            }
            SignalName::SelfVerify => {
                let name = variant.ok_or_else(|| {
                    Error::Config("Self-Verify requested without a prompt variant".to_string())
                })?;
                let confidences = records
                    .iter()
                    .map(|r| {
                        let logits = r.verify.get(name).ok_or_else(|| {
                            Error::Config(format!(
                                "prompt variant {name:?} missing from example {}",
                                r.example_id
                            ))
                        })?;
                        self_verify_confidence(logits)
                    })
                    .collect::<Result<Vec<_>>>()?;
                with_y_avg(signal, confidences)
            }
            SignalName::Margin | SignalName::EntropyConf => {
                let confidences = records
                    .iter()
                    .map(|r| {
                        let probs = softmax(&averaged_scores(r), 1.0)?;
                        if signal == SignalName::Margin {
                            margin_signal(&probs)
                        } else {
                            entropy_confidence(&probs)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                with_y_avg(signal, confidences)
            }
            SignalName::LlAvgT => {
                let t = temperature.ok_or_else(|| {
                    Error::Config("LL-AVG-T requested without a fitted temperature".to_string())
                })?;
                let confidences = records
                    .iter()
                    .map(|r| ll_avg_temperature_signal(r, t).map(|(_, c)| c))
                    .collect::<Result<Vec<_>>>()?;
                with_y_avg(signal, confidences)
            }
        };
        frames.push(frame);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{OptionScore, RunManifest};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn record(options: &[(u32, f64)], gold: usize) -> ExampleRecord {
        ExampleRecord {
            example_id: "e".into(),
            order_index: 0,
            gold_index: gold,
            options: options
                .iter()
                .map(|&(t, s)| OptionScore {
                    token_count: t,
                    sum_logprob: s,
                })
                .collect(),
            verify: BTreeMap::new(),
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4], 1.0).unwrap(), vec![0.25; 4]);
        let p = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!(close(p[0], 2.0 / 3.0, 1e-15) && close(p[1], 1.0 / 3.0, 1e-15));
        let p = softmax(&[4f64.ln(), 0.0], 2.0).unwrap();
        assert!(close(p[0], 2.0 / 3.0, 1e-15) && close(p[1], 1.0 / 3.0, 1e-15));
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(softmax(&[], 1.0), Err(Error::Domain(_))));
        assert!(matches!(softmax(&[1.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(softmax(&[1.0], -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 999.0], 1.0).unwrap();
        assert!(close(p[0], sigmoid(1.0), 1e-15));
    }

    #[test]
    fn ll_avg_examples() {
        let (i, c) = ll_avg_signal(&record(&[(1, -1.0), (2, -1.0)], 0));
        assert_eq!(i, 1);
        assert!(close(c, 0.622_459_331_201_854_6, 1e-12));

        let (i, c) = ll_avg_signal(&record(&[(2, -2.0), (1, -1.0), (4, -4.0)], 0));
        assert_eq!(i, 0);
        assert!(close(c, 1.0 / 3.0, 1e-15));

        let (i, c) = ll_avg_signal(&record(&[(1, 0.0), (1, -10.0)], 0));
        assert_eq!(i, 0);
        assert!(close(c, 1.0 / (1.0 + (-10f64).exp()), 1e-15));
        assert!(close(c, 0.999_954_6, 1e-7));
    }

    #[test]
    fn ll_sum_examples() {
        let (i, c) = ll_sum_signal(&record(&[(1, -1.0), (2, -1.0)], 0));
        assert_eq!((i, c), (0, 0.5));
        let (i, c) = ll_sum_signal(&record(&[(1, -1.0), (2, -0.5)], 0));
        assert_eq!(i, 1);
        assert!(close(c, sigmoid(0.5), 1e-15));
    }

    #[test]
    fn normalization_changes_the_winner() {
        let r = record(&[(1, -1.0), (2, -1.0)], 1);
        assert_eq!(ll_avg_signal(&r).0, 1);
        assert_eq!(ll_sum_signal(&r).0, 0);
    }

    fn verify(t: &[f64], f: &[f64]) -> VerifyLogits {
        VerifyLogits {
            true_logits: t.to_vec(),
            false_logits: f.to_vec(),
            fallback_used: false,
        }
    }

    #[test]
    fn self_verify_examples() {
        let c = self_verify_confidence(&verify(&[1.0], &[0.0])).unwrap();
        assert!(close(c, 0.731_058_578_630_004_9, 1e-12));
        let c = self_verify_confidence(&verify(&[0.0, 0.0], &[0.0])).unwrap();
        assert!(close(c, 2.0 / 3.0, 1e-12));
        for x in [-30.0, 0.0, 3.7, 120.0] {
            assert_eq!(self_verify_confidence(&verify(&[x], &[x])).unwrap(), 0.5);
        }
        assert!(self_verify_confidence(&verify(&[f64::NAN], &[0.0])).is_err());
    }

    #[test]
    fn margin_and_entropy_examples() {
        assert!(close(margin_signal(&[0.5, 0.3, 0.2]).unwrap(), 0.2, 1e-15));
        assert_eq!(margin_signal(&[0.25; 4]).unwrap(), 0.0);
        assert_eq!(margin_signal(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert!(margin_signal(&[1.0]).is_err());

        assert!(close(entropy_confidence(&[0.25; 4]).unwrap(), 0.0, 1e-15));
        assert_eq!(entropy_confidence(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(close(
            entropy_confidence(&[0.5, 0.5, 0.0, 0.0]).unwrap(),
            0.5,
            1e-15
        ));
        assert!(entropy_confidence(&[1.0]).is_err());
    }

    #[test]
    fn signal_names_round_trip() {
        for s in SignalName::ALL {
            assert_eq!(s.as_str().parse::<SignalName>().unwrap(), s);
        }
        assert!("LL-MAX".parse::<SignalName>().is_err());
    }

    fn manifest(n: u64) -> RunManifest {
        RunManifest {
            schema_version: "1".into(),
            dataset_name: "d".into(),
            dataset_config: String::new(),
            dataset_split: "test".into(),
            dataset_revision: "r".into(),
            model_id: "m".into(),
            seed: 42,
            prompt_variants: vec!["default".into()],
            true_token_ids: vec![1],
            false_token_ids: vec![2],
            example_count: n,
            discarded_count: 0,
            dataset_label: None,
            model_label: None,
        }
    }

    fn run(records: Vec<ExampleRecord>) -> ValidatedRun {
        let records = records
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.order_index = i as u64;
                r.verify.insert("default".into(), verify(&[1.0], &[0.0]));
                r
            })
            .collect::<Vec<_>>();
        ValidatedRun::new(manifest(records.len() as u64), records).unwrap()
    }

    #[test]
    fn frames_all_correct() {
        let run = run(vec![
            record(&[(1, -0.1), (1, -2.0)], 0),
            record(&[(1, -3.0), (1, -0.2)], 1),
            record(&[(2, -8.0), (1, -1.0), (1, -0.5)], 2),
        ]);
        let frames = build_signal_frames(&run, &[SignalName::LlAvg], None, None).unwrap();
        assert_eq!(frames[0].labels, vec![true, true, true]);
        assert_eq!(frames[0].accuracy(), 1.0);
    }

    #[test]
    fn frames_separate_y_avg_and_y_sum() {
        let run = run(vec![record(&[(1, -1.0), (2, -1.0)], 1)]);
        let frames = build_signal_frames(
            &run,
            &[SignalName::LlAvg, SignalName::LlSum, SignalName::SelfVerify],
            Some("default"),
            None,
        )
        .unwrap();
        assert_eq!(frames[0].labels, vec![true]);
        assert_eq!(frames[1].labels, vec![false]);
        assert_eq!(frames[2].labels, vec![true]);
        assert_eq!(frames[2].predicted_index, vec![1]);
    }

    #[test]
    fn missing_variant_is_config_error() {
        let run = run(vec![record(&[(1, -1.0), (2, -1.0)], 1)]);
        let err = build_signal_frames(&run, &[SignalName::SelfVerify], Some("audit_v1"), None)
            .unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("audit_v1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn temperature_signal_needs_temperature() {
        let run = run(vec![record(&[(1, -1.0), (2, -1.0)], 1)]);
        assert!(build_signal_frames(&run, &[SignalName::LlAvgT], None, None).is_err());
        let f = build_signal_frames(&run, &[SignalName::LlAvgT], None, Some(1.0)).unwrap();
        let g = build_signal_frames(&run, &[SignalName::LlAvg], None, None).unwrap();
        assert_eq!(f[0].confidences, g[0].confidences);
    }

    proptest! {
        #[test]
        fn shift_invariance(
            opts in proptest::collection::vec((1u32..6, -20.0f64..0.0), 2..6),
            shift in -50.0f64..50.0,
        ) {
            let base = record(&opts, 0);
            let avg = averaged_scores(&base);
            let shifted: Vec<f64> = avg.iter().map(|a| a + shift).collect();
            let p0 = softmax(&avg, 1.0).unwrap();
            let p1 = softmax(&shifted, 1.0).unwrap();
            prop_assert_eq!(argmax(&avg), argmax(&shifted));
            for (a, b) in p0.iter().zip(&p1) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_sums_to_one(scores in proptest::collection::vec(-700.0f64..700.0, 1..12), t in 0.05f64..20.0) {
            let p = softmax(&scores, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn two_option_llavg_is_logistic_of_gap(a in -10.0f64..0.0, b in -10.0f64..0.0, la in 1u32..5, lb in 1u32..5) {
            let r = record(&[(la, a), (lb, b)], 0);
            let (_, c) = ll_avg_signal(&r);
            let gap = (r.options[0].average() - r.options[1].average()).abs();
            prop_assert!((c - sigmoid(gap)).abs() < 1e-12);
        }

        #[test]
        fn self_verify_monotone(
            t in proptest::collection::vec(-8.0f64..8.0, 1..4),
            f in proptest::collection::vec(-8.0f64..8.0, 1..4),
            bump in 0.01f64..5.0,
            which in 0usize..4,
        ) {
            let base = self_verify_confidence(&verify(&t, &f)).unwrap();
            let mut t2 = t.clone();
            let i = which % t2.len();
            t2[i] += bump;
            prop_assert!(self_verify_confidence(&verify(&t2, &f)).unwrap() > base);
            let mut f2 = f.clone();
            let j = which % f2.len();
            f2[j] += bump;
            prop_assert!(self_verify_confidence(&verify(&t, &f2)).unwrap() < base);
        }

        #[test]
        fn margin_entropy_permutation_invariant(
            scores in proptest::collection::vec(-10.0f64..0.0, 2..7),
            seed in any::<u64>(),
        ) {
            let p = softmax(&scores, 1.0).unwrap();
            let mut q = p.clone();
            let mut rng = crate::rng::seeded(seed);
            crate::rng::shuffle(&mut rng, &mut q);
            prop_assert!((margin_signal(&p).unwrap() - margin_signal(&q).unwrap()).abs() < 1e-15);
            prop_assert!((entropy_confidence(&p).unwrap() - entropy_confidence(&q).unwrap()).abs() < 1e-12);
        }
    }
}
