use std::fmt::Write as _;

use ssm_bench_core::screening::{screen, threshold_offsets, LambdaRule, NormalField, ScreeningConfig, ScreeningResult};
use ssm_bench_core::shape_data::io::{format_point_set, load_point_set, load_volume};
use ssm_bench_core::shape_data::{flatten, unflatten, ShapeVector};
use ssm_bench_core::shape_space::{fit_pca, ModeRule, PcaSubspace};

use super::{load_ensemble, report_head};
use crate::config::{RunConfig, ScreenSection};
use crate::error::{CliError, CliResult, Context};
use crate::output::OutDir;

pub struct ScreenedSample {
    pub id: String,
    pub label: Option<u8>,
    pub result: ScreeningResult,
    pub thresholded: Vec<f64>,
    pub threshold: f64,
}

impl ScreenedSample {
    pub fn nonzero(&self) -> usize {
        self.thresholded.iter().filter(|&&d| d != 0.0).count()
    }

    pub fn control_like(&self) -> bool {
        self.nonzero() == 0
    }

    pub fn verdict(&self) -> String {
        if self.control_like() {
            format!(
                "control-like: max |Δx| < threshold ({:.3e} < {})",
                self.result.max_abs_offset(),
                self.threshold
            )
        } else {
            format!("flagged: {} offsets beyond ±{}", self.nonzero(), self.threshold)
        }
    }
}

pub fn screening_config(s: &ScreenSection) -> ScreeningConfig {
    ScreeningConfig {
        lambda: match s.lambda {
            Some(l) => LambdaRule::Fixed(l),
            None => LambdaRule::Auto {
                factor: s.lambda_factor,
            },
        },
        beta: s.beta,
        convergence_tol: s.tolerance,
        max_iters: s.max_iters,
        align: s.align,
        ..ScreeningConfig::default()
    }
}

pub fn screen_sample<N: NormalField + ?Sized>(
    id: &str,
    label: Option<u8>,
    sample: &ShapeVector,
    field: &N,
    sub: &PcaSubspace,
    cfg: &ScreeningConfig,
    threshold: f64,
) -> CliResult<ScreenedSample> {
    let result = screen(sample, field, sub, cfg).context(|| format!("screening '{id}'"))?;
    Ok(ScreenedSample {
        id: id.to_string(),
        label,
        thresholded: threshold_offsets(&result.offsets, threshold),
        result,
        threshold,
    })
}

/// sample,label,o_0,...,o_{M-1} with thresholded offsets; empty label when
/// unknown.
pub fn features_csv(samples: &[ScreenedSample]) -> String {
    let m = samples.first().map_or(0, |s| s.thresholded.len());
    let mut out = String::from("sample,label");
    for i in 0..m {
        let _ = write!(out, ",o_{i}");
    }
    out.push('\n');
    for s in samples {
        let _ = write!(out, "{},{}", s.id, s.label.map_or(String::new(), |l| l.to_string()));
        for d in &s.thresholded {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(samples: &[ScreenedSample]) -> String {
    let mut out = String::from(
        "sample,label,iterations,converged,lambda,final_energy,max_abs_offset,nonzero_offsets,control_like\n",
    );
    for s in samples {
        let r = &s.result;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.id,
            s.label.map_or(String::new(), |l| l.to_string()),
            r.iterations,
            r.converged,
            r.lambda,
            r.energy_trace.last().copied().unwrap_or(f64::NAN),
            r.max_abs_offset(),
            s.nonzero(),
            s.control_like()
        );
    }
    out
}

pub fn write_sample(out: &mut OutDir, prefix: &str, s: &ScreenedSample) -> CliResult<()> {
    out.write(&format!("{prefix}/{}/offsets.csv", s.id), &s.result.offsets_csv())?;
    out.write(
        &format!("{prefix}/{}/energy_trace.csv", s.id),
        &s.result.energy_trace_csv(),
    )?;
    let recon = unflatten(&s.result.reconstruction, 3).context(|| format!("sample '{}'", s.id))?;
    out.write(
        &format!("{prefix}/{}/reconstruction.pts", s.id),
        &format_point_set(&recon),
    )?;
    Ok(())
}

pub fn run(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let s = &cfg.screen;
    let (controls, _) = load_ensemble(&s.controls, "screen controls")?;
    let rule = s
        .n_modes
        .map_or(ModeRule::VarianceFraction(s.variance_fraction), ModeRule::Fixed);
    let sub = fit_pca(&controls, rule).context(|| "controls model".into())?;
    let scfg = screening_config(s);
    let mut done = Vec::with_capacity(s.samples.len());
    for e in &s.samples {
        let pts = load_point_set(&e.points).context(|| format!("sample '{}'", e.id))?;
        let vol = load_volume(&e.volume).context(|| format!("sample '{}'", e.id))?;
        let r = screen_sample(&e.id, e.label, &flatten(&pts), &vol, &sub, &scfg, s.threshold)?;
        log::info!("{}: {} ({} iterations)", e.id, r.verdict(), r.result.iterations);
        write_sample(out, "samples", &r)?;
        done.push(r);
    }
    out.write("summary.csv", &summary_csv(&done))?;
    out.write("features.csv", &features_csv(&done))?;
    let mut md = report_head("ssm-bench screen", cfg, cfg.seed.unwrap_or(0));
    let _ = writeln!(md, "Controls: {} shapes, {} modes.\n", controls.len(), sub.n_modes());
    for r in &done {
        let _ = writeln!(md, "- {}: {}", r.id, r.verdict());
    }
    out.write("report.md", &md)?;
    let stuck: Vec<&str> = done
        .iter()
        .filter(|r| !r.result.converged)
        .map(|r| r.id.as_str())
        .collect();
    if !stuck.is_empty() {
        return Err(CliError::Numerical(format!(
            "screening did not converge within {} iterations for: {}",
            s.max_iters,
            stuck.join(", ")
        )));
    }
    Ok(())
}
