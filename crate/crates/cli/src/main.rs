use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssm_bench::{commands, Command, RunConfig};

/// Evaluation and validation of statistical shape models.
#[derive(Parser)]
#[command(name = "ssm-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a box-bump ensemble, volumes, truth and an outlier.
    Synth(Common),
    /// Compactness, generalization and specificity curves.
    Evaluate(Common),
    /// Elbow analysis, k-means labels and k-medoids representatives.
    Cluster(Common),
    /// Transfer landmarks from mean space to subjects.
    InferLandmarks(Common),
    /// Screen samples against a controls model for sparse surface offsets.
    Screen(Common),
    /// Offsets-based control/pathology classification.
    Classify(Common),
    /// Full synthetic pipeline with a markdown report.
    Repro(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SSM_BENCH_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, common) = match cli.command {
        Cmd::Synth(c) => (Command::Synth, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::Cluster(c) => (Command::Cluster, c),
        Cmd::InferLandmarks(c) => (Command::InferLandmarks, c),
        Cmd::Screen(c) => (Command::Screen, c),
        Cmd::Classify(c) => (Command::Classify, c),
        Cmd::Repro(c) => (Command::Repro, c),
    };
    let result = RunConfig::load(&common.config).and_then(|mut cfg| {
        cfg.apply_overrides(common.seed, common.out);
        commands::run(cmd, &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ssm-bench {}: {e}", cmd.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
