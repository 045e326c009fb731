use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn selpred(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_selpred"));
    cmd.args(args).env_remove("SELPRED_OUT");
    if let Some(dir) = out_env {
        cmd.env("SELPRED_OUT", dir);
    }
    cmd.output().unwrap()
}

fn synth(dir: &Path) {
    let out = selpred(
        &[
            "synth",
            "--n",
            "40",
            "--quality",
            "0.5",
            "--accuracy",
            "0.5",
            "--seed",
            "3",
            "--out",
            dir.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_run_dir_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = selpred(
        &[
            "eval",
            "--run-dir",
            "/no/such/run",
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/run"));
}

#[test]
fn unknown_signal_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("run"));
    let run = tmp.path().join("run");
    let out = selpred(
        &[
            "eval",
            "--run-dir",
            run.to_str().unwrap(),
            "--signals",
            "LL-AVG,Nope",
            "--out",
            "x",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_records_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    synth(&run);
    let path = run.join("records.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(
        &path,
        text.replacen("\"sum_logprob\":", "\"sum_logprob\":\"NaN\",\"x\":", 1),
    )
    .unwrap();
    let out = selpred(
        &[
            "eval",
            "--run-dir",
            run.to_str().unwrap(),
            "--out",
            tmp.path().join("o").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    synth(&run);
    let out_root = tmp.path().join("env-out");
    let out = selpred(
        &[
            "eval",
            "--run-dir",
            run.to_str().unwrap(),
            "--signals",
            "LL-AVG,Self-Verify,LL-SUM",
            "--no-bootstrap",
        ],
        Some(&out_root),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_root.join("main_table.csv").is_file());
    assert!(!out_root.join("bootstrap.csv").exists());
    let snapshot: serde_json::Value =
        serde_json::from_slice(&fs::read(out_root.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["bootstrap"]["enabled"], false);
    assert_eq!(snapshot["signals"].as_array().unwrap().len(), 3);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    synth(&run);
    let config = tmp.path().join("config.json");
    fs::write(
        &config,
        serde_json::json!({ "run_directories": ["/missing"], "signals": ["LL-AVG"] }).to_string(),
    )
    .unwrap();
    let out_dir = tmp.path().join("o");
    let out = selpred(
        &[
            "eval",
            "--config",
            config.to_str().unwrap(),
            "--run-dir",
            run.to_str().unwrap(),
            "--no-bootstrap",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let main = fs::read_to_string(out_dir.join("main_table.csv")).unwrap();
    assert!(main.starts_with("Dataset,Model,Prompt,Acc (LL-AVG),AUROC (LL-AVG),AURC (LL-AVG)\n"));
}

#[test]
fn no_output_directory_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    synth(&run);
    let out = selpred(&["eval", "--run-dir", run.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curves_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    synth(&run);
    let out_dir = tmp.path().join("c");
    let out = selpred(
        &[
            "curves",
            "--run-dir",
            run.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let files: Vec<_> = fs::read_dir(out_dir.join("curves")).unwrap().collect();
    assert_eq!(files.len(), 12);
    let sv =
        fs::read_to_string(out_dir.join("curves/Synthetic__synth-s3__default__Self-Verify.csv"))
            .unwrap();
    assert!(sv.starts_with("coverage,risk\n0,1\n"));
    assert_eq!(sv.lines().count(), 42);
}
