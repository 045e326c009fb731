//! Selective-prediction evaluation for multiple-choice language-model runs.
//!
//! The engine reads per-example score records (option log-likelihoods and
//! True/False verification logits), turns them into confidence signals, and
//! scores each signal for correctness ranking (AUROC), selective prediction
//! (risk–coverage curves, AURC, operating points) and calibration (Brier,
//! ECE-10). Temperature scaling and bootstrap ΔAUROC intervals live in
//! [`calibration`]; [`report`] assembles everything into tables.
//!
//! Module map:
//!
//! - [`records`]: record/manifest data model, `records.jsonl` format, run loading
//! - [`signals`]: LL-AVG, LL-SUM, Self-Verify, Margin, EntropyConf, LL-AVG-T
//! - [`metrics`]: AUROC, risk–coverage, AURC, operating points, Brier, ECE
//! - [`calibration`]: calibration split, temperature fit, bootstrap, percentiles
//! - [`synth`]: synthetic run factory and brute-force oracles
//! - [`report`]: evaluation orchestration and table emitters

pub mod calibration;
pub mod error;
pub mod metrics;
pub mod records;
pub mod report;
pub mod rng;
pub mod signals;
pub mod synth;

pub use error::{Error, Result};
