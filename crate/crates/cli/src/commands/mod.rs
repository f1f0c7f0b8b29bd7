mod classify;
mod cluster;
mod evaluate;
mod landmarks;
pub mod repro;
mod screen;
mod synth;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ssm_bench_core::shape_data::io::load_point_set;
use ssm_bench_core::shape_data::CorrespondenceEnsemble;

use crate::config::{Command, RunConfig, ShapeSource};
use crate::error::{CliError, CliResult, Context};
use crate::output::OutDir;

pub use screen::{screen_sample, ScreenedSample};

/// Validates the config, owns the output directory for the run and
/// dispatches to the command.
pub fn run(cmd: Command, cfg: &RunConfig) -> CliResult<()> {
    cfg.validate(cmd)?;
    let seed = cfg.root_seed(cmd)?;
    let mut out = OutDir::create(&cfg.out_dir(), cmd.name())?;
    out.write("resolved_config.toml", &cfg.to_toml())?;
    log::info!("{} -> {}", cmd.name(), out.root().display());
    let res = match cmd {
        Command::Synth => synth::run(cfg, seed, &mut out),
        Command::Evaluate => evaluate::run(cfg, seed, &mut out),
        Command::Cluster => cluster::run(cfg, seed, &mut out),
        Command::InferLandmarks => landmarks::run(cfg, &mut out),
        Command::Screen => screen::run(cfg, &mut out),
        Command::Classify => classify::run(cfg, seed, &mut out),
        Command::Repro => repro::run(cfg, seed, &mut out),
    };
    match res {
        Ok(()) => out.finish(),
        // the run completed; the failure is in the result, not the outputs
        Err(e @ CliError::Numerical(_)) => {
            out.log(&format!("finished with error: {e}"))?;
            out.finish()?;
            Err(e)
        }
        Err(e) => {
            let _ = out.log(&format!("failed: {e}"));
            Err(e)
        }
    }
}

/// Markdown report head embedding the resolved config and seed.
fn report_head(title: &str, cfg: &RunConfig, seed: u64) -> String {
    let mut s = format!("# {title}\n\nRoot seed: {seed}\n\n");
    let _ = write!(s, "## Resolved configuration\n\n```toml\n{}```\n\n", cfg.to_toml());
    s
}

fn load_ensemble(src: &ShapeSource, what: &str) -> CliResult<(CorrespondenceEnsemble, Vec<PathBuf>)> {
    let paths = src.paths()?;
    if paths.is_empty() {
        return Err(CliError::config(format!("{what}: no point files found")));
    }
    let shapes = paths
        .iter()
        .map(|p| load_point_set(p).context(|| what.to_string()))
        .collect::<CliResult<Vec<_>>>()?;
    let ens = CorrespondenceEnsemble::new(shapes).context(|| what.to_string())?;
    Ok((ens, paths))
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}
