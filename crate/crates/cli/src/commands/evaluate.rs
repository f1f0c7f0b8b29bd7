use std::fmt::Write as _;

use ssm_bench_core::metrics::{
    compactness, compare_curves, generalization, metrics_csv, specificity, LooAlignment, MetricCurve,
};
use ssm_bench_core::seed::{derive_seed, rng_from_seed};
use ssm_bench_core::shape_data::{generalized_procrustes, CorrespondenceEnsemble};
use ssm_bench_core::shape_space::{fit_pca, modes_for_fraction, ModeRule};

use super::{load_ensemble, report_head};
use crate::config::{parse_loo, RunConfig};
use crate::error::{CliError, CliResult, Context};
use crate::output::OutDir;

pub struct Evaluation {
    pub compactness: MetricCurve,
    pub generalization: MetricCurve,
    pub specificity: MetricCurve,
    pub leading_ratio: f64,
    pub modes_97: usize,
    pub spectrum_csv: String,
}

/// All three curves for K = 1..=k_max. Specificity beyond the numerical
/// rank r repeats S(r): further modes have zero variance and leave the
/// samples unchanged.
pub fn evaluate_ensemble(
    ens: &CorrespondenceEnsemble,
    k_max: usize,
    samples: usize,
    loo: LooAlignment,
    seed: u64,
) -> CliResult<Evaluation> {
    let full = fit_pca(ens, ModeRule::VarianceFraction(1.0)).context(|| "fitting PCA".into())?;
    let c = compactness(&full, k_max).context(|| "compactness".into())?;
    let g = generalization(ens, k_max, loo).context(|| "generalization".into())?;
    let rank = full.n_modes().min(k_max);
    let mut rng = rng_from_seed(seed);
    let s = if rank == 0 {
        let mean = full.mean();
        let d = ens
            .vectors()
            .iter()
            .map(|v| (v - mean).norm_squared())
            .fold(f64::INFINITY, f64::min);
        MetricCurve {
            name: "specificity".into(),
            values: vec![d; k_max],
            stderr: Some(vec![0.0; k_max]),
        }
    } else {
        let mut s = specificity(&full, ens, rank, samples, &mut rng).context(|| "specificity".into())?;
        let (last, last_se) = (s.values[rank - 1], s.stderr.as_ref().map_or(0.0, |e| e[rank - 1]));
        s.values.resize(k_max, last);
        if let Some(e) = &mut s.stderr {
            e.resize(k_max, last_se);
        }
        s
    };
    Ok(Evaluation {
        leading_ratio: full.leading_ratio(),
        modes_97: modes_for_fraction(full.spectrum(), 0.97),
        spectrum_csv: full.spectrum_csv(),
        compactness: c,
        generalization: g,
        specificity: s,
    })
}

pub fn run(cfg: &RunConfig, seed: u64, out: &mut OutDir) -> CliResult<()> {
    let e = &cfg.evaluate;
    let loo = parse_loo(&e.loo_alignment)?;
    let mut report = report_head("ssm-bench evaluate", cfg, seed);
    report.push_str("| model | N | M | K_max | first-mode share | modes for 97% |\n|---|---|---|---|---|---|\n");
    let mut evals: Vec<(String, Evaluation)> = Vec::new();
    for m in &e.models {
        let (mut ens, _) = load_ensemble(m, &format!("model '{}'", m.name))?;
        if ens.len() < 3 {
            return Err(CliError::config(format!(
                "model '{}': evaluation needs at least 3 shapes",
                m.name
            )));
        }
        if e.procrustes {
            ens = generalized_procrustes(&ens, false, 1e-10, 200)
                .context(|| format!("aligning '{}'", m.name))?
                .aligned;
        }
        let k_max = e.k_max.unwrap_or_else(|| (ens.len() - 2).min(10));
        let ev = evaluate_ensemble(
            &ens,
            k_max,
            e.specificity_samples,
            loo,
            derive_seed(seed, &format!("specificity/{}", m.name)),
        )?;
        out.write(
            &format!("metrics_{}.csv", m.name),
            &metrics_csv(
                &ev.compactness,
                &ev.generalization,
                &ev.specificity,
                ens.n_points(),
                e.rms_per_point,
            ),
        )?;
        out.write(&format!("spectrum_{}.csv", m.name), &ev.spectrum_csv)?;
        let _ = writeln!(
            report,
            "| {} | {} | {} | {k_max} | {:.4} | {} |",
            m.name,
            ens.len(),
            ens.n_points(),
            ev.leading_ratio,
            ev.modes_97
        );
        evals.push((m.name.clone(), ev));
    }
    if let Some(((base, a), rest)) = evals.split_first() {
        for (name, b) in rest {
            for (ca, cb) in [
                (&a.compactness, &b.compactness),
                (&a.generalization, &b.generalization),
                (&a.specificity, &b.specificity),
            ] {
                let cmp = compare_curves(ca, cb).context(|| "comparing curves".into())?;
                out.write(
                    &format!("compare_{base}_vs_{name}_{}.csv", ca.name),
                    &cmp.to_csv(base, name),
                )?;
            }
        }
    }
    if e.rms_per_point {
        report.push_str("\nGeneralization and specificity are reported as RMS per point (mm).\n");
    } else {
        report.push_str("\nGeneralization and specificity are squared distances (mm²).\n");
    }
    out.write("report.md", &report)?;
    Ok(())
}
