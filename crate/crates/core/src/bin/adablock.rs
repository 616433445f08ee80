use std::path::PathBuf;
use std::process::ExitCode;

use adablock_core::harness::{analyze, replay, run, AnalysisThresholds, ExperimentSpec, HarnessError};
use adablock_core::metrics::RegimeThresholds;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adablock", version, about = "Semi-autoregressive diffusion decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment spec.
    Run(RunArgs),
    /// Compute failure, regime and heatmap reports for stored traces.
    Analyze(AnalyzeArgs),
    /// Re-decode a trace through the trace predictor and compare.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum concurrent decode sessions.
    #[arg(long)]
    jobs: Option<usize>,
    /// Extra `key=value` overrides, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory searched recursively for `*.jsonl` traces.
    #[arg(long)]
    traces: PathBuf,
    /// Defaults to `<traces>/analysis`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Event threshold; defaults to each trace's recorded tau.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    tau_hi: f64,
    #[arg(long, default_value_t = 0.1)]
    tau_lo: f64,
    #[arg(long, default_value_t = 3)]
    persistence: usize,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_cmd(args: RunArgs) -> Result<bool, HarnessError> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if let Some(out) = args.out {
        spec.out = out;
    }
    if let Some(seed) = args.seed {
        spec.experiment_seed = seed;
    }
    if let Some(jobs) = args.jobs {
        spec.set_override("jobs", &jobs.to_string())?;
    }
    for o in &args.overrides {
        let (k, v) =
            o.split_once('=').ok_or_else(|| HarnessError::Invalid(format!("override {o:?} is not KEY=VALUE")))?;
        spec.set_override(k.trim(), v.trim())?;
    }
    let report = run(&spec)?;
    let failed = report.failures();
    println!(
        "{} runs, {} failed; aggregate at {}",
        report.runs.len(),
        failed,
        report.out.join("aggregate.csv").display()
    );
    Ok(failed == 0)
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<bool, HarnessError> {
    let out = args.out.unwrap_or_else(|| args.traces.join("analysis"));
    let th = AnalysisThresholds {
        tau: args.tau,
        regimes: RegimeThresholds { tau_hi: args.tau_hi, tau_lo: args.tau_lo, persistence: args.persistence },
    };
    let report = analyze(&args.traces, &out, th)?;
    println!(
        "analyzed {} traces, skipped {}; reports in {}",
        report.analyzed.len(),
        report.skipped.len(),
        out.display()
    );
    Ok(true)
}

fn replay_cmd(args: ReplayArgs) -> Result<bool, HarnessError> {
    let outcome = replay(&args.trace, args.out.as_deref())?;
    match outcome.divergence {
        None => println!("replay identical ({} records)", outcome.result.trace.len()),
        Some(i) => println!("replay diverges at record {i}"),
    }
    Ok(outcome.identical())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Replay(a) => replay_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
