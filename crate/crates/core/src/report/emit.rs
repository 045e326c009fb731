//! Table builders and the output-directory writer.
//!
//! Every builder is a pure function of already-computed results; rounding
//! happens only when a [`Table`] is rendered as text.

use std::fs;
use std::path::Path;

use super::table::{Cell, Table};
use super::{EvalConfig, Evaluation};
use crate::error::{Error, Result};
use crate::metrics::{CurvePoint, MetricReport};
use crate::signals::SignalName;

const KEY_COLUMNS: [&str; 3] = ["Dataset", "Model", "Prompt"];

fn header(extra: &[String]) -> Vec<String> {
    KEY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(extra.iter().cloned())
        .collect()
}

fn key_cells(dataset: &str, model: &str, prompt: &str) -> Vec<Cell> {
    vec![Cell::text(dataset), Cell::text(model), Cell::text(prompt)]
}

/// `0.8` → `"80"`, `0.125` → `"12.5"`.
fn percent(target: f64) -> String {
    let p = target * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round())
    } else {
        format!("{p}")
    }
}

/// Groups reports into (dataset, model, prompt) rows, preserving order.
fn rows_by_prompt(reports: &[MetricReport]) -> Vec<Vec<&MetricReport>> {
    let mut rows: Vec<Vec<&MetricReport>> = Vec::new();
    for r in reports {
        match rows.last_mut() {
            Some(row)
                if row[0].dataset == r.dataset
                    && row[0].model == r.model
                    && row[0].prompt == r.prompt =>
            {
                row.push(r)
            }
            _ => rows.push(vec![r]),
        }
    }
    rows
}

/// Main results: accuracy, AUROC and AURC for the three headline signals.
/// A column whose signal has no reports is dropped and noted.
pub fn main_table(reports: &[MetricReport]) -> Table {
    const SIGNALS: [SignalName; 3] = [SignalName::LlAvg, SignalName::SelfVerify, SignalName::LlSum];
    let present: Vec<SignalName> = SIGNALS
        .into_iter()
        .filter(|s| reports.iter().any(|r| r.signal == *s))
        .collect();

    let mut extra = vec!["Acc (LL-AVG)".to_string()];
    for metric in ["AUROC", "AURC"] {
        extra.extend(present.iter().map(|s| format!("{metric} ({s})")));
    }
    let mut table = Table::new(header(&extra));
    for s in SIGNALS.iter().filter(|s| !present.contains(s)) {
        table.notes.push(format!(
            "AUROC ({s}) and AURC ({s}) omitted: no {s} results"
        ));
    }

    for row in rows_by_prompt(reports) {
        let find = |s: SignalName| row.iter().find(|r| r.signal == s);
        let first = row[0];
        let mut cells = key_cells(&first.dataset, &first.model, &first.prompt);
        cells.push(Cell::Real(Some(first.accuracy_llavg)));
        cells.extend(
            present
                .iter()
                .map(|&s| Cell::Real(find(s).and_then(|r| r.auroc))),
        );
        cells.extend(present.iter().map(|&s| Cell::Real(find(s).map(|r| r.aurc))));
        table.push(cells);
    }
    table
}

pub fn delta_table(eval: &Evaluation) -> Table {
    let mut table = Table::new(header(&[
        "dAUROC (SV-LL-AVG)".to_string(),
        "dAURC (SV-LL-AVG)".to_string(),
        "dAUROC (SV-LL-SUM)".to_string(),
        "dAURC (SV-LL-SUM)".to_string(),
    ]));
    for d in &eval.deltas {
        let mut cells = key_cells(&d.dataset, &d.model, &d.prompt);
        cells.extend(
            [
                d.d_auroc_sv_llavg,
                d.d_aurc_sv_llavg,
                d.d_auroc_sv_llsum,
                d.d_aurc_sv_llsum,
            ]
            .map(Cell::Real),
        );
        table.push(cells);
    }
    table
}

pub fn bootstrap_table(eval: &Evaluation) -> Table {
    let mut table = Table::new(header(&[
        "Mean dAUROC (SV-LL-AVG)".to_string(),
        "CI 2.5%".to_string(),
        "CI 97.5%".to_string(),
        "Kept".to_string(),
        "Discarded".to_string(),
        "Note".to_string(),
    ]));
    for b in &eval.bootstrap {
        let mut cells = key_cells(&b.dataset, &b.model, &b.prompt);
        match &b.result {
            Some(r) => cells.extend([
                Cell::Real(Some(r.mean_delta)),
                Cell::Real(Some(r.ci_low)),
                Cell::Real(Some(r.ci_high)),
                Cell::Count(r.kept_replicates),
                Cell::Count(r.discarded_replicates),
            ]),
            None => cells.extend([
                Cell::Real(None),
                Cell::Real(None),
                Cell::Real(None),
                Cell::Real(None),
                Cell::Real(None),
            ]),
        }
        cells.push(Cell::text(b.note.clone().unwrap_or_default()));
        table.push(cells);
    }
    table
}

pub fn operating_point_table(
    reports: &[MetricReport],
    coverage_targets: &[f64],
    risk_targets: &[f64],
) -> Table {
    let mut extra = vec!["Signal".to_string()];
    extra.extend(
        coverage_targets
            .iter()
            .map(|&t| format!("err@{}%cov", percent(t))),
    );
    extra.extend(
        risk_targets
            .iter()
            .map(|&t| format!("cov@{}%err", percent(t))),
    );
    let mut table = Table::new(header(&extra));
    for r in reports {
        let mut cells = key_cells(&r.dataset, &r.model, &r.prompt);
        cells.push(Cell::text(r.signal.as_str()));
        cells.extend(coverage_targets.iter().map(|&t| Cell::Real(r.err_at(t))));
        cells.extend(risk_targets.iter().map(|&t| Cell::Real(r.cov_at(t))));
        table.push(cells);
    }
    table
}

pub fn calibration_table(reports: &[MetricReport]) -> Table {
    let mut table = Table::new(header(&[
        "Signal".to_string(),
        "Brier".to_string(),
        "ECE10".to_string(),
    ]));
    for r in reports {
        let mut cells = key_cells(&r.dataset, &r.model, &r.prompt);
        cells.extend([
            Cell::text(r.signal.as_str()),
            Cell::Real(Some(r.brier)),
            Cell::Real(Some(r.ece10)),
        ]);
        table.push(cells);
    }
    table
}

/// Every signal, including Margin, EntropyConf and LL-AVG-T.
pub fn auxiliary_table(reports: &[MetricReport]) -> Table {
    let mut table = Table::new(header(&[
        "Signal".to_string(),
        "N".to_string(),
        "Accuracy".to_string(),
        "AUROC".to_string(),
        "AURC".to_string(),
    ]));
    for r in reports {
        let mut cells = key_cells(&r.dataset, &r.model, &r.prompt);
        cells.extend([
            Cell::text(r.signal.as_str()),
            Cell::Count(r.n_examples),
            Cell::Real(Some(r.accuracy)),
            Cell::Real(r.auroc),
            Cell::Real(Some(r.aurc)),
        ]);
        table.push(cells);
    }
    table
}

/// Self-Verify under the first two prompt variants of each run.
pub fn ablation_table(eval: &Evaluation) -> Table {
    let mut table = Table::new(
        [
            "Dataset",
            "Model",
            "Variant A",
            "Variant B",
            "AUROC A",
            "AUROC B",
            "|dAUROC|",
            "AURC A",
            "AURC B",
            "|dAURC|",
        ]
        .map(String::from)
        .to_vec(),
    );
    for a in &eval.ablation {
        table.push(vec![
            Cell::text(&a.dataset),
            Cell::text(&a.model),
            Cell::text(&a.variants[0]),
            Cell::text(&a.variants[1]),
            Cell::Real(a.auroc[0]),
            Cell::Real(a.auroc[1]),
            Cell::Real(a.abs_d_auroc),
            Cell::Real(Some(a.aurc[0])),
            Cell::Real(Some(a.aurc[1])),
            Cell::Real(Some(a.abs_d_aurc)),
        ]);
    }
    table
}

pub fn temperature_table(eval: &Evaluation) -> Table {
    let mut table = Table::new(
        [
            "Dataset",
            "Model",
            "T",
            "Calibration NLL",
            "Calibration n",
            "Evaluation n",
            "Note",
        ]
        .map(String::from)
        .to_vec(),
    );
    for t in &eval.temperature {
        table.push(vec![
            Cell::text(&t.dataset),
            Cell::text(&t.model),
            Cell::Real(t.fit.map(|f| f.temperature)),
            Cell::Real(t.fit.map(|f| f.calibration_nll)),
            Cell::Count(t.calibration_size),
            Cell::Count(t.evaluation_size),
            Cell::text(t.note.clone().unwrap_or_default()),
        ]);
    }
    table
}

/// Plot-ready `coverage,risk` rows, anchor first.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("coverage,risk\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.coverage, p.risk));
    }
    out
}

fn slug_part(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// File name of one curve: `<dataset>__<model>__<prompt>__<signal>.csv`.
pub fn curve_file_name(dataset: &str, model: &str, prompt: &str, signal: SignalName) -> String {
    format!(
        "{}__{}__{}__{}.csv",
        slug_part(dataset),
        slug_part(model),
        slug_part(prompt),
        slug_part(signal.as_str())
    )
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_table(dir: &Path, stem: &str, table: &Table) -> Result<()> {
    write(&dir.join(format!("{stem}.csv")), &table.to_csv())?;
    write(&dir.join(format!("{stem}.txt")), &table.to_text())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Validation(format!("cannot serialize output: {e}")))
}

/// Writes only the curve files into `<out_dir>/curves`.
pub fn write_curves(out_dir: &Path, eval: &Evaluation) -> Result<()> {
    let curves_dir = out_dir.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    for c in &eval.curves {
        let name = curve_file_name(&c.dataset, &c.model, &c.prompt, c.signal);
        write(&curves_dir.join(name), &curve_csv(&c.points))?;
    }
    Ok(())
}

/// Writes every table, curve and snapshot. All writes happen here, in a
/// fixed order, from one thread.
pub fn write_outputs(out_dir: &Path, config: &EvalConfig, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if eval.reports.is_empty() {
        return Err(Error::Validation("no reports to write".to_string()));
    }
    let reports = &eval.reports;
    write_table(out_dir, "main_table", &main_table(reports))?;
    write_table(out_dir, "deltas", &delta_table(eval))?;
    if config.bootstrap.enabled {
        write_table(out_dir, "bootstrap", &bootstrap_table(eval))?;
    }
    write_table(
        out_dir,
        "operating_points",
        &operating_point_table(reports, &config.coverage_targets, &config.risk_targets),
    )?;
    write_table(out_dir, "calibration", &calibration_table(reports))?;
    write_table(out_dir, "auxiliary", &auxiliary_table(reports))?;
    if !eval.ablation.is_empty() {
        write_table(out_dir, "prompt_ablation", &ablation_table(eval))?;
    }
    if !eval.temperature.is_empty() {
        write_table(out_dir, "temperature", &temperature_table(eval))?;
    }
    write_curves(out_dir, eval)?;
    // the snapshot omits where it was written so reruns elsewhere match
    let snapshot = EvalConfig {
        output_directory: None,
        ..config.clone()
    };
    write(&out_dir.join("config.json"), &to_json(&snapshot)?)?;
    write(&out_dir.join("metrics.json"), &to_json(eval)?)
}
