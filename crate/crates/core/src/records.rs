//! Run data model and on-disk format.
//!
//! A run directory holds two files:
//!
//! - `manifest.json`: one [`RunManifest`] object describing run identity.
//! - `records.jsonl`: one [`ExampleRecord`] per line, UTF-8.
//!
//! Field names are case-sensitive. Unknown fields are ignored and counted;
//! missing required fields are parse errors. Reals are written in shortest
//! round-trip decimal form so a parse/serialize cycle is lossless. Numeric
//! fields also accept a quoted value (`"NaN"`, `"inf"`, `"-1.5"`) so that
//! non-finite values written by other tooling surface as validation errors
//! rather than opaque syntax errors.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng;

/// Format version written into every manifest and record line.
pub const SCHEMA_VERSION: &str = "1";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

/// Log-likelihood of one answer option: `token_count` option tokens whose
/// conditional log-probabilities (nats) sum to `sum_logprob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptionScore {
    pub token_count: u32,
    pub sum_logprob: f64,
}

impl OptionScore {
    /// Length-normalized score, the per-token mean log-probability.
    pub fn average(&self) -> f64 {
        self.sum_logprob / f64::from(self.token_count)
    }
}

/// Final-position next-token logits restricted to the True and False
/// surface-form token sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyLogits {
    pub true_logits: Vec<f64>,
    pub false_logits: Vec<f64>,
    /// The `{1, 0}` token variants stood in for True/False.
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub example_id: String,
    pub order_index: u64,
    pub gold_index: usize,
    pub options: Vec<OptionScore>,
    /// Verification logits keyed by prompt-variant name.
    pub verify: BTreeMap<String, VerifyLogits>,
}

impl ExampleRecord {
    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    /// Canonical single-line serialization (no trailing newline).
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            schema_version: &'a str,
            example_id: &'a str,
            order_index: u64,
            gold_index: usize,
            options: &'a [OptionScore],
            verify: &'a BTreeMap<String, VerifyLogits>,
        }
        serde_json::to_string(&Line {
            schema_version: SCHEMA_VERSION,
            example_id: &self.example_id,
            order_index: self.order_index,
            gold_index: self.gold_index,
            options: &self.options,
            verify: &self.verify,
        })
        .expect("record serialization is infallible")
    }

    fn validate(&self) -> Result<()> {
        let k = self.options.len();
        if k < 2 {
            return Err(Error::Validation(format!(
                "example {}: needs at least 2 options, found {k}",
                self.example_id
            )));
        }
        if self.gold_index >= k {
            return Err(Error::Validation(format!(
                "example {}: gold_index {} out of range for {k} options",
                self.example_id, self.gold_index
            )));
        }
        for (i, opt) in self.options.iter().enumerate() {
            if opt.token_count == 0 {
                return Err(Error::Validation(format!(
                    "example {}: option {i} has token_count 0",
                    self.example_id
                )));
            }
            if !opt.sum_logprob.is_finite() {
                return Err(Error::Validation(format!(
                    "example {}: option {i} has non-finite sum_logprob {}",
                    self.example_id, opt.sum_logprob
                )));
            }
        }
        for (variant, v) in &self.verify {
            if v.true_logits.is_empty() || v.false_logits.is_empty() {
                return Err(Error::Validation(format!(
                    "example {}: variant {variant:?} has an empty logit list",
                    self.example_id
                )));
            }
            if let Some(x) = v
                .true_logits
                .iter()
                .chain(&v.false_logits)
                .find(|x| !x.is_finite())
            {
                return Err(Error::Validation(format!(
                    "example {}: variant {variant:?} has non-finite logit {x}",
                    self.example_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub dataset_name: String,
    pub dataset_config: String,
    pub dataset_split: String,
    pub dataset_revision: String,
    pub model_id: String,
    pub seed: u64,
    pub prompt_variants: Vec<String>,
    pub true_token_ids: Vec<i64>,
    pub false_token_ids: Vec<i64>,
    pub example_count: u64,
    /// Examples dropped by the producer because the gold answer did not map
    /// to an option index.
    #[serde(default)]
    pub discarded_count: u64,
    /// Short dataset name for tables; falls back to `dataset_config`, then
    /// `dataset_name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_label: Option<String>,
    /// Short model name for tables; falls back to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_label: Option<String>,
}

impl RunManifest {
    pub fn dataset_display(&self) -> &str {
        match &self.dataset_label {
            Some(label) => label,
            None if !self.dataset_config.is_empty() => &self.dataset_config,
            None => &self.dataset_name,
        }
    }

    pub fn model_display(&self) -> &str {
        self.model_label.as_deref().unwrap_or(&self.model_id)
    }
}

const MANIFEST_FIELDS: &[&str] = &[
    "schema_version",
    "dataset_name",
    "dataset_config",
    "dataset_split",
    "dataset_revision",
    "model_id",
    "seed",
    "prompt_variants",
    "true_token_ids",
    "false_token_ids",
    "example_count",
    "discarded_count",
    "dataset_label",
    "model_label",
];
const RECORD_FIELDS: &[&str] = &[
    "schema_version",
    "example_id",
    "order_index",
    "gold_index",
    "options",
    "verify",
];
const OPTION_FIELDS: &[&str] = &["token_count", "sum_logprob"];
const VERIFY_FIELDS: &[&str] = &["true_logits", "false_logits", "fallback_used"];

/// A record together with the number of unknown fields it carried.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecord {
    pub record: ExampleRecord,
    pub unknown_fields: usize,
}

/// A real that may arrive as a JSON number or as a quoted decimal.
#[derive(Deserialize)]
#[serde(untagged)]
enum Real {
    Number(f64),
    Text(String),
}

impl Real {
    fn value(&self) -> std::result::Result<f64, String> {
        match self {
            Real::Number(x) => Ok(*x),
            Real::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("not a number: {s:?}")),
        }
    }
}

#[derive(Deserialize)]
struct RecordLine {
    schema_version: String,
    example_id: String,
    order_index: u64,
    gold_index: i64,
    options: Vec<OptionLine>,
    verify: BTreeMap<String, VerifyLine>,
}

#[derive(Deserialize)]
struct OptionLine {
    token_count: i64,
    sum_logprob: Real,
}

#[derive(Deserialize)]
struct VerifyLine {
    true_logits: Vec<Real>,
    false_logits: Vec<Real>,
    fallback_used: bool,
}

fn count_unknown(obj: &Value, known: &[&str]) -> usize {
    obj.as_object()
        .map(|m| m.keys().filter(|k| !known.contains(&k.as_str())).count())
        .unwrap_or(0)
}

fn unknown_fields_in_record(value: &Value) -> usize {
    let mut n = count_unknown(value, RECORD_FIELDS);
    if let Some(opts) = value.get("options").and_then(Value::as_array) {
        n += opts
            .iter()
            .map(|o| count_unknown(o, OPTION_FIELDS))
            .sum::<usize>();
    }
    if let Some(verify) = value.get("verify").and_then(Value::as_object) {
        n += verify
            .values()
            .map(|v| count_unknown(v, VERIFY_FIELDS))
            .sum::<usize>();
    }
    n
}

/// Parses one line of `records.jsonl`. `line_number` is 1-based and only
/// used for error messages.
pub fn parse_record_line(line: &str, line_number: usize) -> Result<ParsedRecord> {
    let parse_err = |message: String| Error::Parse {
        line: line_number,
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let unknown_fields = unknown_fields_in_record(&value);
    let raw: RecordLine = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;

    if raw.schema_version != SCHEMA_VERSION {
        return Err(Error::Validation(format!(
            "line {line_number}: unsupported schema_version {:?} (expected {SCHEMA_VERSION:?})",
            raw.schema_version
        )));
    }
    let id = raw.example_id;
    let invalid = |what: String| Error::Validation(format!("example {id}: {what}"));

    let k = raw.options.len();
    if raw.gold_index < 0 || raw.gold_index as u64 >= k as u64 {
        return Err(invalid(format!(
            "gold_index {} out of range for {k} options",
            raw.gold_index
        )));
    }
    let mut options = Vec::with_capacity(k);
    for (i, opt) in raw.options.iter().enumerate() {
        let token_count = u32::try_from(opt.token_count)
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| invalid(format!("option {i} has token_count {}", opt.token_count)))?;
        let sum_logprob = opt
            .sum_logprob
            .value()
            .map_err(|e| invalid(format!("option {i} sum_logprob: {e}")))?;
        options.push(OptionScore {
            token_count,
            sum_logprob,
        });
    }
    let mut verify = BTreeMap::new();
    for (variant, v) in &raw.verify {
        let reals = |xs: &[Real]| -> Result<Vec<f64>> {
            xs.iter()
                .map(|x| {
                    x.value()
                        .map_err(|e| invalid(format!("variant {variant:?}: {e}")))
                })
                .collect()
        };
        verify.insert(
            variant.clone(),
            VerifyLogits {
                true_logits: reals(&v.true_logits)?,
                false_logits: reals(&v.false_logits)?,
                fallback_used: v.fallback_used,
            },
        );
    }
    let record = ExampleRecord {
        example_id: id.clone(),
        order_index: raw.order_index,
        gold_index: raw.gold_index as usize,
        options,
        verify,
    };
    record.validate()?;
    Ok(ParsedRecord {
        record,
        unknown_fields,
    })
}

/// Counts gathered while loading a run directory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadDiagnostics {
    /// Unknown fields skipped across the manifest and all record lines.
    pub unknown_fields: usize,
    /// Producer-side discards reported by the manifest.
    pub discarded_examples: u64,
}

impl LoadDiagnostics {
    pub fn warnings(&self) -> usize {
        self.unknown_fields
    }
}

/// A manifest plus its records, sorted by `order_index` with indices
/// `0..n` and every record satisfying the record invariants. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedRun {
    manifest: RunManifest,
    records: Vec<ExampleRecord>,
    diagnostics: LoadDiagnostics,
}

impl ValidatedRun {
    pub fn new(manifest: RunManifest, mut records: Vec<ExampleRecord>) -> Result<Self> {
        if manifest.prompt_variants.is_empty() {
            return Err(Error::Validation(
                "manifest lists no prompt_variants".to_string(),
            ));
        }
        if manifest.example_count != records.len() as u64 {
            return Err(Error::Integrity(format!(
                "manifest example_count {} but {} records present",
                manifest.example_count,
                records.len()
            )));
        }
        for r in &records {
            r.validate()?;
        }
        records.sort_by_key(|r| r.order_index);
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.order_index) {
                return Err(Error::Integrity(format!(
                    "duplicate order_index {} (example {})",
                    r.order_index, r.example_id
                )));
            }
        }
        if let Some((pos, r)) = records
            .iter()
            .enumerate()
            .find(|(pos, r)| r.order_index != *pos as u64)
        {
            return Err(Error::Integrity(format!(
                "order_index sequence has a gap: expected {pos}, found {} (example {})",
                r.order_index, r.example_id
            )));
        }
        let diagnostics = LoadDiagnostics {
            unknown_fields: 0,
            discarded_examples: manifest.discarded_count,
        };
        Ok(Self {
            manifest,
            records,
            diagnostics,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn records(&self) -> &[ExampleRecord] {
        &self.records
    }

    pub fn diagnostics(&self) -> LoadDiagnostics {
        self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Loads and validates a run directory.
pub fn load_run(dir: impl AsRef<Path>) -> Result<ValidatedRun> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let records_path = dir.join(RECORDS_FILE);

    let manifest_text =
        fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest_value: Value = serde_json::from_str(&manifest_text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", manifest_path.display()),
    })?;
    let mut unknown_fields = count_unknown(&manifest_value, MANIFEST_FIELDS);
    let manifest: RunManifest =
        serde_json::from_value(manifest_value).map_err(|e| Error::Parse {
            line: 1,
            message: format!("{}: {e}", manifest_path.display()),
        })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Validation(format!(
            "{}: unsupported schema_version {:?}",
            manifest_path.display(),
            manifest.schema_version
        )));
    }

    let records_text =
        fs::read_to_string(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut records = Vec::new();
    for (i, line) in records_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_record_line(line, i + 1)?;
        unknown_fields += parsed.unknown_fields;
        records.push(parsed.record);
    }

    let mut run = ValidatedRun::new(manifest, records)?;
    run.diagnostics.unknown_fields = unknown_fields;
    Ok(run)
}

/// Writes `manifest.json` and `records.jsonl` into `dir`, creating it.
pub fn write_run(dir: impl AsRef<Path>, run: &ValidatedRun) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest =
        serde_json::to_string_pretty(run.manifest()).expect("manifest serialization is infallible");
    manifest.push('\n');
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let mut body = String::new();
    for r in run.records() {
        body.push_str(&r.to_line());
        body.push('\n');
    }
    let records_path = dir.join(RECORDS_FILE);
    fs::write(&records_path, body).map_err(|e| Error::io(&records_path, e))
}

/// Seeded evaluation order: a Fisher–Yates permutation of `0..n` driven by
/// the engine generator (see [`crate::rng`]).
pub fn shuffled_order(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Domain("shuffled_order needs n >= 1".to_string()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::seeded(seed);
    rng::shuffle(&mut rng, &mut order);
    Ok(order)
}
