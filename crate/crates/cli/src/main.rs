use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use selpred::records::write_run;
use selpred::report::{self, emit, EvalConfig, OUTPUT_ENV};
use selpred::signals::SignalName;
use selpred::synth::{generate_run, SynthSpec};
use selpred::{Error, Result};

/// Selective-prediction evaluation of LLM confidence signals.
#[derive(Debug, Parser)]
#[command(name = "selpred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate run directories and write every table.
    Eval(EvalArgs),
    /// Write a synthetic run directory with known signal quality.
    Synth(SynthArgs),
    /// Write only the risk-coverage curve files for one run.
    Curves(CurvesArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; repeat for several. Replaces the config's list.
    #[arg(long = "run-dir")]
    run_dirs: Vec<PathBuf>,
    /// Output directory [default: config value, then $SELPRED_OUT].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated signal names, e.g. LL-AVG,Self-Verify.
    #[arg(long, value_delimiter = ',')]
    signals: Vec<SignalName>,
    #[arg(long)]
    no_bootstrap: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    options: usize,
    /// Self-Verify separation in [0, 1]; 1 ranks every correct example first.
    #[arg(long)]
    quality: f64,
    /// Fraction of examples LL-AVG answers correctly.
    #[arg(long)]
    accuracy: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// LL-AVG separation in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    ll_quality: f64,
    #[arg(long, env = OUTPUT_ENV)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, env = OUTPUT_ENV)]
    out: PathBuf,
}

fn eval(args: EvalArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => EvalConfig::from_file(path)?,
        None if args.run_dirs.is_empty() => {
            return Err(Error::Config(
                "give --config or at least one --run-dir".to_string(),
            ))
        }
        None => EvalConfig::new(Vec::new()),
    };
    if !args.run_dirs.is_empty() {
        config.run_directories = args.run_dirs;
    }
    if !args.signals.is_empty() {
        config.signals = args.signals;
    }
    if args.no_bootstrap {
        config.bootstrap.enabled = false;
    }
    let out = args
        .out
        .or_else(|| config.output_directory.clone())
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .ok_or_else(|| {
            Error::Config(format!(
                "no output directory: pass --out or set {OUTPUT_ENV}"
            ))
        })?;
    config.output_directory = Some(out.clone());

    let evaluation = report::run_eval(&config, &out)?;
    for run in &evaluation.runs {
        if run.unknown_fields > 0 {
            eprintln!(
                "warning: {}: skipped {} unknown field(s)",
                run.directory.display(),
                run.unknown_fields
            );
        }
        if run.discarded_examples > 0 {
            eprintln!(
                "warning: {}: producer discarded {} example(s)",
                run.directory.display(),
                run.discarded_examples
            );
        }
    }
    print!("{}", emit::main_table(&evaluation.reports).to_text());
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::new(args.n, args.options, args.quality, args.accuracy, args.seed);
    spec.likelihood_quality = args.ll_quality;
    let run = generate_run(&spec)?;
    write_run(&args.out, &run)?;
    eprintln!("wrote {} examples to {}", run.len(), args.out.display());
    Ok(())
}

fn curves(args: CurvesArgs) -> Result<()> {
    let mut config = EvalConfig::new(vec![args.run_dir]);
    config.bootstrap.enabled = false;
    let evaluation = report::evaluate(&config)?;
    emit::write_curves(&args.out, &evaluation)?;
    eprintln!(
        "wrote {} curve(s) to {}",
        evaluation.curves.len(),
        args.out.join("curves").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Curves(a) => curves(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
