//! Synthetic runs and brute-force reference metrics.
//!
//! [`generate_run`] builds a record-model run whose correctness pattern and
//! signal strength are controlled directly, so downstream metrics have
//! known qualitative behaviour. The [`oracle`] functions recompute AUROC
//! and AURC by direct enumeration and share no code with [`crate::metrics`].

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{
    shuffled_order, ExampleRecord, OptionScore, RunManifest, ValidatedRun, VerifyLogits,
    SCHEMA_VERSION,
};
use crate::rng::{self, EngineRng};

pub const SYNTH_VARIANTS: [&str; 2] = ["audit_v1", "default"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_examples: usize,
    pub n_options: usize,
    /// Separation of the Self-Verify logit populations for correct and
    /// incorrect examples; 0 is uninformative, 1 separates them completely.
    pub signal_quality: f64,
    /// Fraction of examples LL-AVG answers correctly.
    pub accuracy_target: f64,
    pub seed: u64,
    /// How strongly the LL-AVG winning margin tracks correctness; 0 leaves
    /// the likelihood signals uninformative.
    #[serde(default)]
    pub likelihood_quality: f64,
}

impl SynthSpec {
    pub fn new(
        n_examples: usize,
        n_options: usize,
        signal_quality: f64,
        accuracy_target: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_examples,
            n_options,
            signal_quality,
            accuracy_target,
            seed,
            likelihood_quality: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::Domain("n_examples must be positive".to_string()));
        }
        if self.n_options < 2 {
            return Err(Error::Domain("n_options must be at least 2".to_string()));
        }
        if !(0.0..=1.0).contains(&self.signal_quality) {
            return Err(Error::Domain(
                "signal_quality must lie in [0, 1]".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.likelihood_quality) {
            return Err(Error::Domain(
                "likelihood_quality must lie in [0, 1]".to_string(),
            ));
        }
        if !(self.accuracy_target > 0.0 && self.accuracy_target < 1.0) {
            return Err(Error::Domain(
                "accuracy_target must lie in (0, 1)".to_string(),
            ));
        }
        Ok(())
    }
}

/// Gap between the means of the correct and incorrect verification-logit
/// populations. Noise is a standard normal clipped to ±4, so a gap of 9 at
/// quality 1 leaves the two populations disjoint.
fn verification_gap(quality: f64) -> f64 {
    9.0 * quality
}

fn clipped_normal(g: &mut EngineRng) -> f64 {
    let z: f64 = StandardNormal.sample(g);
    z.clamp(-4.0, 4.0)
}

pub fn generate_run(spec: &SynthSpec) -> Result<ValidatedRun> {
    spec.validate()?;
    let n = spec.n_examples;
    let k = spec.n_options;
    let mut g = rng::seeded(spec.seed);

    // exactly round(acc·n) correct examples, placed at random
    let n_correct = ((spec.accuracy_target * n as f64).round() as usize).min(n);
    let mut correct: Vec<bool> = (0..n).map(|i| i < n_correct).collect();
    rng::shuffle(&mut g, &mut correct);

    let ids = shuffled_order(n, spec.seed)?;
    let gap = verification_gap(spec.signal_quality);

    let mut records = Vec::with_capacity(n);
    for (i, &is_correct) in correct.iter().enumerate() {
        let gold = rng::below(&mut g, k as u64) as usize;
        let pred = if is_correct {
            gold
        } else {
            (gold + 1 + rng::below(&mut g, k as u64 - 1) as usize) % k
        };
        let runner_up = (pred + 1 + rng::below(&mut g, k as u64 - 1) as usize) % k;

        let top = -(0.2 + 2.0 * rng::unit(&mut g));
        let lead = 0.05
            + 1.5 * rng::unit(&mut g)
            + if is_correct {
                3.0 * spec.likelihood_quality
            } else {
                0.0
            };
        let options = (0..k)
            .map(|j| {
                let avg = if j == pred {
                    top
                } else if j == runner_up {
                    top - lead
                } else {
                    top - lead - 0.05 - 2.0 * rng::unit(&mut g)
                };
                let token_count = 1 + rng::below(&mut g, 6) as u32;
                OptionScore {
                    token_count,
                    sum_logprob: avg * f64::from(token_count),
                }
            })
            .collect();

        let mut verify = BTreeMap::new();
        for variant in SYNTH_VARIANTS {
            let mean = if is_correct { gap / 2.0 } else { -gap / 2.0 };
            let d = mean + clipped_normal(&mut g);
            let base = -2.0 + 4.0 * rng::unit(&mut g);
            verify.insert(
                variant.to_string(),
                VerifyLogits {
                    true_logits: vec![base + d, base + d - 6.0],
                    false_logits: vec![base, base - 6.0],
                    fallback_used: false,
                },
            );
        }

        records.push(ExampleRecord {
            example_id: format!("synth-{:06}", ids[i]),
            order_index: i as u64,
            gold_index: gold,
            options,
            verify,
        });
    }

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        dataset_name: "synthetic".to_string(),
        dataset_config: format!("n{n}-k{k}"),
        dataset_split: "test".to_string(),
        dataset_revision: format!("seed-{}", spec.seed),
        model_id: format!(
            "synthetic/q{}-l{}-a{}",
            spec.signal_quality, spec.likelihood_quality, spec.accuracy_target
        ),
        seed: spec.seed,
        prompt_variants: SYNTH_VARIANTS.iter().map(|s| s.to_string()).collect(),
        true_token_ids: vec![1, 2],
        false_token_ids: vec![3, 4],
        example_count: n as u64,
        discarded_count: 0,
        dataset_label: Some("Synthetic".to_string()),
        model_label: Some(format!("synth-s{}", spec.seed)),
    };
    ValidatedRun::new(manifest, records)
}

/// Reference metrics computed the slow, obvious way.
pub mod oracle {
    use crate::error::{Error, Result};

    /// AUROC by counting every (correct, incorrect) pair.
    pub fn auroc_bruteforce(confidences: &[f64], labels: &[bool]) -> Result<f64> {
        let mut pairs = 0u64;
        let mut score = 0.0f64;
        for i in 0..confidences.len() {
            if !labels[i] {
                continue;
            }
            for j in 0..confidences.len() {
                if labels[j] {
                    continue;
                }
                pairs += 1;
                if confidences[i] > confidences[j] {
                    score += 1.0;
                } else if confidences[i] == confidences[j] {
                    score += 0.5;
                }
            }
        }
        if pairs == 0 {
            return Err(Error::Degenerate("only one class present".to_string()));
        }
        Ok(score / pairs as f64)
    }

    /// AURC by materializing each retained prefix and integrating with
    /// trapezoids from the `(0, 1)` anchor.
    pub fn aurc_bruteforce(confidences: &[f64], labels: &[bool]) -> f64 {
        let n = confidences.len();
        // selection order: repeatedly take the highest remaining confidence,
        // earliest position first among equals
        let mut taken = vec![false; n];
        let mut order = Vec::new();
        for _ in 0..n {
            let mut pick: Option<usize> = None;
            for j in 0..n {
                if taken[j] {
                    continue;
                }
                match pick {
                    None => pick = Some(j),
                    Some(p) if confidences[j] > confidences[p] => pick = Some(j),
                    _ => {}
                }
            }
            let p = pick.unwrap();
            taken[p] = true;
            order.push(p);
        }

        let mut coverage = vec![0.0];
        let mut risk = vec![1.0];
        for k in 1..=n {
            let prefix = &order[..k];
            let errors = prefix.iter().filter(|&&i| !labels[i]).count();
            coverage.push(k as f64 / n as f64);
            risk.push(errors as f64 / k as f64);
        }
        let mut area = 0.0;
        for t in 0..n {
            area += (coverage[t + 1] - coverage[t]) * (risk[t] + risk[t + 1]) / 2.0;
        }
        area
    }
}
