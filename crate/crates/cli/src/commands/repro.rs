//! End-to-end run on synthetic data: box-bump model evaluation, cluster
//! recovery, landmark transfer, outlier screening and offsets-based
//! classification.

use std::fmt::Write as _;

use rand::Rng;
use ssm_bench_core::classifier::{repeated_split_experiment, table1_csv, ClassifierReport};
use ssm_bench_core::cluster::{adjusted_rand_index, elbow, elbow_csv, labels_csv, DEFAULT_RESTARTS};
use ssm_bench_core::metrics::{metrics_csv, LooAlignment};
use ssm_bench_core::morphometry::{
    infer_landmarks, landmark_errors, mean_space_landmarks, paired_t_test, t_test_csv, MeasurementReport,
};
use ssm_bench_core::screening::{LambdaRule, ScreeningConfig};
use ssm_bench_core::seed::{derive_seed, rng_from_seed};
use ssm_bench_core::shape_data::io::format_point_set;
use ssm_bench_core::shape_data::{flatten, CorrespondenceEnsemble, LandmarkSet};
use ssm_bench_core::shape_space::{fit_pca, ModeRule, PcaSubspace};
use ssm_bench_core::synthetic::{
    generate_box_bump_ensemble, generate_box_bump_shapes, generate_cluster_population, generate_side_bump_outlier,
    latent_csv, mask_csv, quadrant_archetypes, BoxBumpSpec, BoxShape, ClusterJitter, SideBumpSpec,
};

use super::classify::{chosen_csv, grid};
use super::evaluate::evaluate_ensemble;
use super::report_head;
use super::screen::{features_csv, screen_sample, summary_csv, write_sample, ScreenedSample};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::output::OutDir;

/// Share of variance kept by the controls model used for screening.
pub const CONTROLS_VARIANCE: f64 = 0.97;

pub fn controls_model(spec: &BoxBumpSpec, n: usize) -> CliResult<(CorrespondenceEnsemble, PcaSubspace)> {
    let data = generate_box_bump_shapes(
        spec,
        &(0..n).map(|i| i as f64 / (n - 1) as f64).collect::<Vec<_>>(),
        false,
    )
    .context(|| "controls ensemble".into())?;
    let sub =
        fit_pca(&data.ensemble, ModeRule::VarianceFraction(CONTROLS_VARIANCE)).context(|| "controls model".into())?;
    Ok((data.ensemble, sub))
}

/// Screening settings for synthetic samples: fixed λ, no pose alignment
/// (the samples share the controls frame).
pub fn synthetic_screening(lambda: f64) -> ScreeningConfig {
    ScreeningConfig {
        lambda: LambdaRule::Fixed(lambda),
        align: false,
        ..ScreeningConfig::default()
    }
}

/// Screens `n_controls` regular shapes and `n_lesions` shapes with a
/// side bump (labels 0 and 1). Bump positions are uniform on [0, 1]; lesion
/// heights are uniform on [3, 5] mm with the centre moved up to 3 mm along y.
pub fn lesion_dataset<R: Rng>(
    spec: &BoxBumpSpec,
    sub: &PcaSubspace,
    n_controls: usize,
    n_lesions: usize,
    lambda: f64,
    rng: &mut R,
) -> CliResult<Vec<ScreenedSample>> {
    let cfg = synthetic_screening(lambda);
    let mut out = Vec::with_capacity(n_controls + n_lesions);
    for i in 0..n_controls {
        let s: f64 = rng.random();
        let shape = BoxShape::new(spec, vec![spec.top_bump(s)]).context(|| "control shape".into())?;
        let x = ssm_bench_core::synthetic::correspondences(spec, &shape).context(|| "control shape".into())?;
        out.push(screen_sample(
            &format!("control_{i:03}"),
            Some(0),
            &flatten(&x),
            &shape,
            sub,
            &cfg,
            0.005,
        )?);
    }
    for i in 0..n_lesions {
        let s: f64 = rng.random();
        let side = SideBumpSpec {
            center: [rng.random_range(-3.0..3.0), 0.0],
            height: rng.random_range(3.0..5.0),
            ..SideBumpSpec::default()
        };
        let o = generate_side_bump_outlier(spec, s, &side).context(|| "lesion shape".into())?;
        out.push(screen_sample(
            &format!("lesion_{i:03}"),
            Some(1),
            &flatten(&o.points),
            &o.shape,
            sub,
            &cfg,
            0.005,
        )?);
    }
    Ok(out)
}

pub fn classify_offsets<R: Rng>(
    samples: &[ScreenedSample],
    n_repeats: usize,
    seed_init: u64,
    rng: &mut R,
) -> CliResult<(ClassifierReport, Vec<ssm_bench_core::classifier::MlpConfig>)> {
    let x: Vec<Vec<f64>> = samples.iter().map(|s| s.thresholded.clone()).collect();
    let y: Vec<u8> = samples.iter().map(|s| s.label.unwrap_or(0)).collect();
    let grid = grid(seed_init, crate::config::ClassifySection::default().epochs);
    let report = repeated_split_experiment(&x, &y, n_repeats, 0.3, &grid, 3, rng).map_err(|source| CliError::Core {
        context: "classification".into(),
        source,
    })?;
    Ok((report, grid))
}

/// In-mask share of nonzero offsets, share of out-of-mask offsets under the
/// threshold, and whether every in-mask nonzero offset has the given sign.
pub fn mask_agreement(s: &ScreenedSample, mask: &[bool], sign: f64) -> (f64, f64, bool) {
    let nz: Vec<usize> = (0..mask.len()).filter(|&i| s.thresholded[i] != 0.0).collect();
    let inside = nz.iter().filter(|&&i| mask[i]).count();
    let out_idx: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
    let quiet = out_idx
        .iter()
        .filter(|&&i| s.result.offsets[i].abs() < s.threshold)
        .count();
    let signs_ok = nz.iter().filter(|&&i| mask[i]).all(|&i| s.thresholded[i] * sign > 0.0);
    let precision = if nz.is_empty() {
        0.0
    } else {
        inside as f64 / nz.len() as f64
    };
    let quiet_share = if out_idx.is_empty() {
        1.0
    } else {
        quiet as f64 / out_idx.len() as f64
    };
    (precision, quiet_share, signs_ok)
}

pub fn run(cfg: &RunConfig, seed: u64, out: &mut OutDir) -> CliResult<()> {
    let r = &cfg.repro;
    let spec = cfg.synth.spec(derive_seed(seed, "synth"));
    let mut md = report_head("ssm-bench repro", cfg, seed);

    // model evaluation on the box-bump ensemble
    out.log("stage evaluate")?;
    let data = generate_box_bump_ensemble(&spec, r.n_shapes).context(|| "box-bump ensemble".into())?;
    for (i, s) in data.ensemble.shapes().iter().enumerate() {
        out.write(&format!("data/shapes/shape_{i:03}.pts"), &format_point_set(s))?;
    }
    out.write("data/latent.csv", &latent_csv(&data.truth))?;
    let k_max = (r.n_shapes - 2).min(10);
    let ev = evaluate_ensemble(
        &data.ensemble,
        k_max,
        r.specificity_samples,
        LooAlignment::None,
        derive_seed(seed, "specificity"),
    )?;
    out.write(
        "evaluate/metrics.csv",
        &metrics_csv(
            &ev.compactness,
            &ev.generalization,
            &ev.specificity,
            data.ensemble.n_points(),
            false,
        ),
    )?;
    out.write("evaluate/spectrum.csv", &ev.spectrum_csv)?;
    md.push_str("## Box-bump model\n\n");
    let _ = writeln!(
        md,
        "{} shapes, {} correspondences. First-mode share λ₁/Σλ = {:.4}; {} modes explain 97% of the variance.\n",
        data.ensemble.len(),
        data.ensemble.n_points(),
        ev.leading_ratio,
        ev.modes_97
    );

    // cluster recovery
    out.log("stage cluster")?;
    let arch = quadrant_archetypes(&spec, r.clusters).context(|| "cluster archetypes".into())?;
    let mut crng = rng_from_seed(derive_seed(seed, "cluster-population"));
    let (pop, truth_labels) =
        generate_cluster_population(&spec, &arch, r.per_cluster, ClusterJitter::default(), &mut crng)
            .context(|| "cluster population".into())?;
    let vectors = pop.vectors();
    let mut krng = rng_from_seed(derive_seed(seed, "cluster"));
    let el = elbow(&vectors, 8.min(vectors.len()), &mut krng, DEFAULT_RESTARTS).context(|| "elbow".into())?;
    let found = &el.results[el.k_star - 1];
    let ari = adjusted_rand_index(&found.labels, &truth_labels).context(|| "agreement".into())?;
    out.write("cluster/elbow.csv", &elbow_csv(&el.curve))?;
    out.write("cluster/labels.csv", &labels_csv(&found.labels))?;
    out.write("cluster/truth_labels.csv", &labels_csv(&truth_labels))?;
    md.push_str("## Cluster recovery\n\n");
    let _ = writeln!(
        md,
        "{} clusters of {} shapes. Elbow k* = {}; adjusted Rand index against truth {:.4}.\n",
        r.clusters, r.per_cluster, el.k_star, ari
    );

    // landmark transfer: even shapes build the mean-space landmarks, odd
    // shapes are predicted
    out.log("stage landmarks")?;
    let shapes = data.ensemble.shapes();
    let train: Vec<usize> = (0..shapes.len()).step_by(2).collect();
    let test: Vec<usize> = (1..shapes.len()).step_by(2).collect();
    let mean_corr = data
        .ensemble
        .subset(&train)
        .context(|| "training subset".into())?
        .mean_shape();
    let pairs: Vec<_> = train
        .iter()
        .map(|&i| (shapes[i].clone(), data.truth.landmarks[i].clone()))
        .collect();
    let mean_lms = mean_space_landmarks(&mean_corr, &pairs, 0.0).context(|| "mean-space landmarks".into())?;
    let mut report = MeasurementReport::new(vec!["apex_height".into()]);
    let apex_z = |l: &LandmarkSet| l.curve("apex").map_or(f64::NAN, |c| c.points.point3(0)[2]);
    for &i in &test {
        let pred = infer_landmarks(&mean_corr, &mean_lms, &shapes[i], 0.0).context(|| format!("shape {i}"))?;
        let truth = &data.truth.landmarks[i];
        let err = landmark_errors(&pred, truth).context(|| format!("shape {i}"))?;
        report
            .push(format!("shape_{i:03}"), vec![apex_z(truth)], vec![apex_z(&pred)], err)
            .context(|| format!("shape {i}"))?;
    }
    out.write("landmarks/landmark_errors.csv", &report.landmark_errors_csv())?;
    out.write("landmarks/measurements.csv", &report.measurements_csv())?;
    let t: Vec<f64> = report.truth.iter().map(|v| v[0]).collect();
    let p: Vec<f64> = report.predicted.iter().map(|v| v[0]).collect();
    let tt = paired_t_test(&p, &t).context(|| "t-test".into())?;
    out.write("landmarks/t_tests.csv", &t_test_csv(&[("apex_height".into(), tt)]))?;
    let overall = report.landmark_errors.iter().map(|e| e.overall).sum::<f64>() / report.len() as f64;
    md.push_str("## Landmark transfer\n\n");
    let _ = writeln!(
        md,
        "TPS transfer from {} training shapes to {} held-out shapes: mean landmark error {:.4} mm; apex-height paired t = {:.4}, p = {:.4}.\n",
        train.len(),
        test.len(),
        overall,
        tt.t,
        tt.p
    );

    // outlier screening, growth and dent
    out.log("stage screen")?;
    let (_, sub) = controls_model(&spec, r.n_shapes)?;
    let scfg = synthetic_screening(r.lambda);
    md.push_str("## Outlier screening\n\n");
    let _ = writeln!(md, "Controls model: {} modes; λ = {}.\n", sub.n_modes(), r.lambda);
    for (name, height) in [("growth", cfg.synth.side_height), ("dent", -cfg.synth.side_height)] {
        let side = SideBumpSpec {
            height,
            ..cfg.synth.side_bump()
        };
        let o = generate_side_bump_outlier(&spec, 0.5, &side).context(|| format!("{name} outlier"))?;
        let res = screen_sample(name, Some(1), &flatten(&o.points), &o.shape, &sub, &scfg, 0.005)?;
        write_sample(out, "screen", &res)?;
        out.write(
            &format!("screen/{name}/lesion_mask.csv"),
            &mask_csv(&o.truth.lesion_mask),
        )?;
        let (prec, quiet, signs) = mask_agreement(&res, &o.truth.lesion_mask, height.signum());
        let _ = writeln!(
            md,
            "- {name}: {}; {:.1}% of nonzero offsets inside the lesion mask, {:.1}% of out-of-mask offsets below threshold, signs {}; {} iterations{}.",
            res.verdict(),
            100.0 * prec,
            100.0 * quiet,
            if signs { "match" } else { "do not match" },
            res.result.iterations,
            if res.result.converged { "" } else { " (not converged)" }
        );
    }
    md.push('\n');

    // classification from offsets
    out.log("stage classify")?;
    let mut drng = rng_from_seed(derive_seed(seed, "lesion-dataset"));
    let samples = lesion_dataset(&spec, &sub, r.n_controls, r.n_lesions, r.lambda, &mut drng)?;
    out.write("classify/features.csv", &features_csv(&samples))?;
    out.write("classify/screening_summary.csv", &summary_csv(&samples))?;
    let mut rng = rng_from_seed(derive_seed(seed, "classify"));
    let (cr, grid) = classify_offsets(&samples, r.n_repeats, derive_seed(seed, "mlp-init"), &mut rng)?;
    out.write("classify/table1.csv", &table1_csv(&[("synthetic".into(), cr.clone())]))?;
    out.write("classify/chosen_configs.csv", &chosen_csv(&cr, &grid))?;
    let flagged = |lab: u8| {
        samples
            .iter()
            .filter(|s| s.label == Some(lab) && !s.control_like())
            .count()
    };
    md.push_str("## Classification\n\n");
    let _ = writeln!(
        md,
        "{} controls ({} flagged by screening) and {} lesions ({} flagged). Over {} splits: test accuracy {:.2} ± {:.2} %, F1 {:.2} ± {:.2} %, AUC {}.\n",
        r.n_controls,
        flagged(0),
        r.n_lesions,
        flagged(1),
        r.n_repeats,
        cr.test.accuracy.mean,
        cr.test.accuracy.std,
        cr.test.f1.mean,
        cr.test.f1.std,
        cr.test.auc.map_or("n/a".into(), |a| format!("{:.3} ± {:.3}", a.mean, a.std))
    );
    out.write("report.md", &md)?;
    Ok(())
}
