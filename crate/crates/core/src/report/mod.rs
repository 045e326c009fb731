//! Evaluation orchestration: load runs, build signal frames, compute
//! metrics, deltas, bootstrap intervals and curves, then hand the result
//! to the table emitters in [`emit`].
//!
//! Prompt-independent signals are computed once per run and repeated on
//! every prompt row. LL-AVG-T is fit on the seeded calibration subset and
//! scored on the remaining evaluation subset only.

pub mod emit;
pub mod table;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    self, bootstrap_delta_auroc, fit_temperature, split_calibration, BootstrapResult,
    TemperatureFit,
};
use crate::error::{Error, Result};
use crate::metrics::{self, compute_report, CurvePoint, MetricReport, ReportKey};
use crate::records::{load_run, ValidatedRun};
use crate::signals::{averaged_scores, build_signal_frames, SignalName};

pub use emit::write_outputs;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "SELPRED_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub enabled: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: calibration::DEFAULT_REPLICATES,
            seed: calibration::DEFAULT_SEED,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureConfig {
    pub fraction: f64,
    pub minimum: usize,
    pub seed: u64,
}

impl Default for TemperatureConfig {
    fn default() -> Self {
        Self {
            fraction: calibration::DEFAULT_CALIBRATION_FRACTION,
            minimum: calibration::DEFAULT_CALIBRATION_MINIMUM,
            seed: calibration::DEFAULT_SEED,
        }
    }
}

fn default_signals() -> Vec<SignalName> {
    SignalName::ALL.to_vec()
}

fn default_coverage_targets() -> Vec<f64> {
    vec![0.8, 0.5]
}

fn default_risk_targets() -> Vec<f64> {
    vec![0.2, 0.1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub run_directories: Vec<PathBuf>,
    #[serde(default = "default_signals")]
    pub signals: Vec<SignalName>,
    /// Verification prompt variants to report; empty means every variant
    /// listed in each run's manifest.
    #[serde(default)]
    pub prompt_variants: Vec<String>,
    #[serde(default = "default_coverage_targets")]
    pub coverage_targets: Vec<f64>,
    #[serde(default = "default_risk_targets")]
    pub risk_targets: Vec<f64>,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub temperature: TemperatureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_directory: Option<PathBuf>,
}

impl EvalConfig {
    pub fn new(run_directories: Vec<PathBuf>) -> Self {
        Self {
            run_directories,
            signals: default_signals(),
            prompt_variants: Vec::new(),
            coverage_targets: default_coverage_targets(),
            risk_targets: default_risk_targets(),
            bootstrap: BootstrapConfig::default(),
            temperature: TemperatureConfig::default(),
            output_directory: None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_directories.is_empty() {
            return Err(Error::Config("no run directories given".to_string()));
        }
        if self.signals.is_empty() {
            return Err(Error::Config("no signals selected".to_string()));
        }
        if let Some(t) = self
            .coverage_targets
            .iter()
            .chain(&self.risk_targets)
            .find(|t| !(**t > 0.0 && **t <= 1.0))
        {
            return Err(Error::Config(format!("target {t} outside (0, 1]")));
        }
        if self.bootstrap.enabled && self.bootstrap.replicates == 0 {
            return Err(Error::Config(
                "bootstrap replicates must be positive".to_string(),
            ));
        }
        let t = &self.temperature;
        if !(t.fraction > 0.0 && t.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "temperature fraction {} outside (0, 1]",
                t.fraction
            )));
        }
        for dir in &self.run_directories {
            if !dir.is_dir() {
                return Err(Error::Config(format!(
                    "run directory {} does not exist",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    fn has(&self, s: SignalName) -> bool {
        self.signals.contains(&s)
    }
}

/// Self-Verify minus the two likelihood baselines for one prompt row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub dataset: String,
    pub model: String,
    pub prompt: String,
    pub d_auroc_sv_llavg: Option<f64>,
    pub d_aurc_sv_llavg: Option<f64>,
    pub d_auroc_sv_llsum: Option<f64>,
    pub d_aurc_sv_llsum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub dataset: String,
    pub model: String,
    pub prompt: String,
    pub result: Option<BootstrapResult>,
    /// Why `result` is missing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub dataset: String,
    pub model: String,
    pub prompt: String,
    pub signal: SignalName,
    pub points: Vec<CurvePoint>,
}

/// Self-Verify across prompt variants of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub model: String,
    pub variants: Vec<String>,
    pub aurc: Vec<f64>,
    pub auroc: Vec<Option<f64>>,
    /// Between the first two variants.
    pub abs_d_auroc: Option<f64>,
    pub abs_d_aurc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub dataset: String,
    pub model: String,
    pub fit: Option<TemperatureFit>,
    pub calibration_size: usize,
    pub evaluation_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub directory: PathBuf,
    pub dataset: String,
    pub model: String,
    pub examples: usize,
    pub prompt_variants: Vec<String>,
    pub unknown_fields: usize,
    pub discarded_examples: u64,
}

/// Everything one `eval` invocation produces, in output order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    pub runs: Vec<RunSummary>,
    pub reports: Vec<MetricReport>,
    pub deltas: Vec<DeltaRow>,
    pub bootstrap: Vec<BootstrapRow>,
    pub ablation: Vec<AblationRow>,
    pub temperature: Vec<TemperatureRow>,
    pub curves: Vec<CurveSeries>,
}

fn with_path(err: Error, path: &Path) -> Error {
    let p = path.display();
    match err {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{p}: {message}"),
        },
        Error::Validation(m) => Error::Validation(format!("{p}: {m}")),
        Error::Integrity(m) => Error::Integrity(format!("{p}: {m}")),
        Error::Config(m) => Error::Config(format!("{p}: {m}")),
        Error::Domain(m) => Error::Domain(format!("{p}: {m}")),
        other => other,
    }
}

/// Loads every run in the config and evaluates it.
pub fn evaluate(config: &EvalConfig) -> Result<Evaluation> {
    config.validate()?;
    let runs = config
        .run_directories
        .par_iter()
        .map(|dir| {
            load_run(dir)
                .and_then(|run| evaluate_run(dir, &run, config))
                .map_err(|e| with_path(e, dir))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut seen = BTreeSet::new();
    for r in &runs {
        if !seen.insert((r.summary.dataset.clone(), r.summary.model.clone())) {
            return Err(Error::Config(format!(
                "two runs share dataset {:?} and model {:?}; set dataset_label/model_label",
                r.summary.dataset, r.summary.model
            )));
        }
    }

    let mut out = Evaluation::default();
    for r in runs {
        out.runs.push(r.summary);
        out.reports.extend(r.reports);
        out.deltas.extend(r.deltas);
        out.bootstrap.extend(r.bootstrap);
        out.ablation.extend(r.ablation);
        out.temperature.extend(r.temperature);
        out.curves.extend(r.curves);
    }
    out.runs
        .sort_by(|a, b| (&a.dataset, &a.model).cmp(&(&b.dataset, &b.model)));
    out.reports.sort_by(|a, b| {
        (&a.dataset, &a.model, &a.prompt, a.signal)
            .cmp(&(&b.dataset, &b.model, &b.prompt, b.signal))
    });
    out.deltas
        .sort_by(|a, b| (&a.dataset, &a.model, &a.prompt).cmp(&(&b.dataset, &b.model, &b.prompt)));
    out.bootstrap
        .sort_by(|a, b| (&a.dataset, &a.model, &a.prompt).cmp(&(&b.dataset, &b.model, &b.prompt)));
    out.ablation
        .sort_by(|a, b| (&a.dataset, &a.model).cmp(&(&b.dataset, &b.model)));
    out.temperature
        .sort_by(|a, b| (&a.dataset, &a.model).cmp(&(&b.dataset, &b.model)));
    out.curves.sort_by(|a, b| {
        (&a.dataset, &a.model, &a.prompt, a.signal)
            .cmp(&(&b.dataset, &b.model, &b.prompt, b.signal))
    });
    Ok(out)
}

/// Evaluates `config` and writes every output file into `out_dir`.
pub fn run_eval(config: &EvalConfig, out_dir: &Path) -> Result<Evaluation> {
    let evaluation = evaluate(config)?;
    write_outputs(out_dir, config, &evaluation)?;
    Ok(evaluation)
}

struct RunOutput {
    summary: RunSummary,
    reports: Vec<MetricReport>,
    deltas: Vec<DeltaRow>,
    bootstrap: Vec<BootstrapRow>,
    ablation: Vec<AblationRow>,
    temperature: Vec<TemperatureRow>,
    curves: Vec<CurveSeries>,
}

fn evaluate_run(dir: &Path, run: &ValidatedRun, config: &EvalConfig) -> Result<RunOutput> {
    let manifest = run.manifest();
    let dataset = manifest.dataset_display().to_string();
    let model = manifest.model_display().to_string();

    let mut variants: Vec<String> = if config.prompt_variants.is_empty() {
        manifest.prompt_variants.clone()
    } else {
        config.prompt_variants.clone()
    };
    variants.sort();
    variants.dedup();

    let llavg = build_signal_frames(run, &[SignalName::LlAvg], None, None)?.remove(0);
    let accuracy_llavg = llavg.accuracy();

    // computed once, repeated on every prompt row
    let independent: Vec<SignalName> = config
        .signals
        .iter()
        .copied()
        .filter(|s| s.is_prompt_independent() && *s != SignalName::LlAvgT)
        .collect();
    let mut shared = build_signal_frames(run, &independent, None, None)?;

    let mut temperature = Vec::new();
    if config.has(SignalName::LlAvgT) {
        let tc = &config.temperature;
        let mut row = TemperatureRow {
            dataset: dataset.clone(),
            model: model.clone(),
            fit: None,
            calibration_size: 0,
            evaluation_size: run.len(),
            note: None,
        };
        match split_calibration(run.len(), tc.fraction, tc.minimum, tc.seed) {
            Ok(split) => {
                let scores: Vec<Vec<f64>> = run.records().iter().map(averaged_scores).collect();
                let gold: Vec<usize> = run.records().iter().map(|r| r.gold_index).collect();
                let fit = fit_temperature(&scores, &gold, &split.calibration_indices)?;
                let frame =
                    build_signal_frames(run, &[SignalName::LlAvgT], None, Some(fit.temperature))?
                        .remove(0);
                if split.evaluation_indices.is_empty() {
                    row.note = Some("no examples left after the calibration split".to_string());
                } else {
                    shared.push(frame.select(&split.evaluation_indices));
                }
                row.fit = Some(fit);
                row.calibration_size = split.calibration_indices.len();
                row.evaluation_size = split.evaluation_indices.len();
            }
            Err(e) => row.note = Some(e.to_string()),
        }
        temperature.push(row);
    }

    let mut reports = Vec::new();
    let mut curves = Vec::new();
    let mut deltas = Vec::new();
    let mut bootstrap = Vec::new();
    let mut sv_reports: Vec<MetricReport> = Vec::new();

    for prompt in &variants {
        let key = ReportKey {
            dataset: &dataset,
            model: &model,
            prompt,
        };
        let sv_frame = if config.has(SignalName::SelfVerify) {
            Some(build_signal_frames(run, &[SignalName::SelfVerify], Some(prompt), None)?.remove(0))
        } else {
            None
        };

        let mut row_reports = Vec::new();
        for frame in shared.iter().chain(sv_frame.as_ref()) {
            row_reports.push(compute_report(
                key,
                frame.signal,
                &frame.confidences,
                &frame.labels,
                accuracy_llavg,
                &config.coverage_targets,
                &config.risk_targets,
            )?);
            curves.push(CurveSeries {
                dataset: dataset.clone(),
                model: model.clone(),
                prompt: prompt.clone(),
                signal: frame.signal,
                points: metrics::risk_coverage_curve(&frame.confidences, &frame.labels)?
                    .points()
                    .to_vec(),
            });
        }

        let find = |s: SignalName| row_reports.iter().find(|r| r.signal == s);
        if let (Some(sv), Some(sv_frame)) = (find(SignalName::SelfVerify), &sv_frame) {
            let diff = |other: Option<&MetricReport>| {
                other.map(|o| (sv.auroc.zip(o.auroc).map(|(a, b)| a - b), sv.aurc - o.aurc))
            };
            let vs_avg = diff(find(SignalName::LlAvg));
            let vs_sum = diff(find(SignalName::LlSum));
            deltas.push(DeltaRow {
                dataset: dataset.clone(),
                model: model.clone(),
                prompt: prompt.clone(),
                d_auroc_sv_llavg: vs_avg.and_then(|x| x.0),
                d_aurc_sv_llavg: vs_avg.map(|x| x.1),
                d_auroc_sv_llsum: vs_sum.and_then(|x| x.0),
                d_aurc_sv_llsum: vs_sum.map(|x| x.1),
            });
            sv_reports.push(sv.clone());

            if config.bootstrap.enabled && config.has(SignalName::LlAvg) {
                let b = &config.bootstrap;
                let (result, note) = match bootstrap_delta_auroc(
                    &sv_frame.confidences,
                    &llavg.confidences,
                    &llavg.labels,
                    b.replicates,
                    b.seed,
                ) {
                    Ok(r) => (Some(r), None),
                    Err(e @ (Error::Degenerate(_) | Error::Statistics(_))) => {
                        (None, Some(e.to_string()))
                    }
                    Err(e) => return Err(e),
                };
                bootstrap.push(BootstrapRow {
                    dataset: dataset.clone(),
                    model: model.clone(),
                    prompt: prompt.clone(),
                    result,
                    note,
                });
            }
        }
        reports.extend(row_reports);
    }

    let mut ablation = Vec::new();
    if let [a, b, ..] = sv_reports.as_slice() {
        ablation.push(AblationRow {
            dataset: dataset.clone(),
            model: model.clone(),
            variants: sv_reports.iter().map(|r| r.prompt.clone()).collect(),
            aurc: sv_reports.iter().map(|r| r.aurc).collect(),
            auroc: sv_reports.iter().map(|r| r.auroc).collect(),
            abs_d_auroc: a.auroc.zip(b.auroc).map(|(x, y)| (x - y).abs()),
            abs_d_aurc: (a.aurc - b.aurc).abs(),
        });
    }

    let diagnostics = run.diagnostics();
    Ok(RunOutput {
        summary: RunSummary {
            directory: dir.to_path_buf(),
            dataset,
            model,
            examples: run.len(),
            prompt_variants: variants,
            unknown_fields: diagnostics.unknown_fields,
            discarded_examples: diagnostics.discarded_examples,
        },
        reports,
        deltas,
        bootstrap,
        ablation,
        temperature,
        curves,
    })
}
