use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ssm_bench_core::classifier::{default_grid, repeated_split_experiment, table1_csv, ClassifierReport, MlpConfig};
use ssm_bench_core::seed::{derive_seed, rng_from_seed};

use super::report_head;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::OutDir;

/// Reads `sample,label,f_0,...`; every row needs a 0/1 label.
pub fn read_features(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>, Vec<u8>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |line: usize, msg: String| CliError::Core {
        context: "reading features".into(),
        source: ssm_bench_core::Error::Parse {
            path: path.to_path_buf(),
            line,
            message: msg,
        },
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("sample,label") => {}
        _ => return Err(bad(1, "expected header 'sample,label,...'".into())),
    }
    let (mut ids, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let id = cols.next().unwrap_or_default().to_string();
        let label = match cols.next().map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(bad(
                    i + 1,
                    format!("sample '{id}' has label {other:?}, expected 0 or 1"),
                ))
            }
        };
        let row = cols
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(i + 1, format!("bad value '{c}'")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        ids.push(id);
        x.push(row);
        y.push(label);
    }
    Ok((ids, x, y))
}

pub fn grid(seed: u64, epochs: usize) -> Vec<MlpConfig> {
    default_grid(seed)
        .into_iter()
        .map(|c| MlpConfig { epochs, ..c })
        .collect()
}

pub fn chosen_csv(report: &ClassifierReport, grid: &[MlpConfig]) -> String {
    let mut out = String::from("repeat,grid_index,config\n");
    for (r, &i) in report.chosen.iter().enumerate() {
        let _ = writeln!(out, "{r},{i},{}", grid[i].describe());
    }
    out
}

pub fn run(cfg: &RunConfig, seed: u64, out: &mut OutDir) -> CliResult<()> {
    let c = &cfg.classify;
    let path = c.features.as_ref().expect("validated");
    let (_, x, y) = read_features(path)?;
    let grid = grid(derive_seed(seed, "mlp-init"), c.epochs);
    let mut rng = rng_from_seed(derive_seed(seed, "classify"));
    let report = repeated_split_experiment(&x, &y, c.n_repeats, c.test_fraction, &grid, c.folds, &mut rng).map_err(
        |source| CliError::Core {
            context: "classification experiment".into(),
            source,
        },
    )?;
    out.write("table1.csv", &table1_csv(&[(c.name.clone(), report.clone())]))?;
    out.write("chosen_configs.csv", &chosen_csv(&report, &grid))?;
    let mut md = report_head("ssm-bench classify", cfg, seed);
    let _ = writeln!(
        md,
        "{} samples, {} repeats, test fraction {}, {}-fold grid search over {} configurations.\n",
        y.len(),
        c.n_repeats,
        c.test_fraction,
        c.folds,
        grid.len()
    );
    let _ = writeln!(
        md,
        "Test accuracy {:.2} ± {:.2} %, F1 {:.2} ± {:.2} %",
        report.test.accuracy.mean, report.test.accuracy.std, report.test.f1.mean, report.test.f1.std
    );
    if report.single_repeat {
        md.push_str("\nSingle repeat: standard deviations are 0 by convention.\n");
    }
    out.write("report.md", &md)?;
    Ok(())
}
