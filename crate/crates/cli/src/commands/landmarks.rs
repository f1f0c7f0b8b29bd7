use std::fmt::Write as _;

use ssm_bench_core::morphometry::{
    fit_ellipse_diameters, infer_landmarks, landmark_errors, mean_space_landmarks, paired_t_test,
    procrustes_fit_landmarks, t_test_csv, MeasurementReport,
};
use ssm_bench_core::shape_data::io::{format_landmark_set, load_landmark_set, load_point_set};
use ssm_bench_core::shape_data::{CorrespondenceEnsemble, LandmarkSet};

use super::report_head;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::output::OutDir;

fn diameters(lms: &LandmarkSet, curves: &[String], who: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * curves.len());
    for name in curves {
        let curve = lms
            .curve(name)
            .ok_or_else(|| CliError::config(format!("{who}: no landmark curve '{name}'")))?;
        let (a, b) = fit_ellipse_diameters(&curve.points).context(|| format!("{who}: ellipse fit on '{name}'"))?;
        out.extend([a, b]);
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let l = &cfg.landmarks;
    let training = l
        .training
        .iter()
        .map(|s| {
            let corr = load_point_set(&s.correspondences).context(|| format!("training '{}'", s.id))?;
            let lms = match &s.landmarks {
                Some(p) => Some(load_landmark_set(p).context(|| format!("training '{}'", s.id))?),
                None => None,
            };
            Ok((corr, lms))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mean_corr = match &l.mean_correspondences {
        Some(p) => load_point_set(p).context(|| "mean correspondences".into())?,
        None => CorrespondenceEnsemble::new(training.iter().map(|t| t.0.clone()).collect())
            .context(|| "training correspondences".into())?
            .mean_shape(),
    };
    let mean_lms = match &l.mean_landmarks {
        Some(p) => load_landmark_set(p).context(|| "mean landmarks".into())?,
        None => {
            let pairs: Vec<_> = training
                .iter()
                .map(|(c, lm)| (c.clone(), lm.clone().expect("validated")))
                .collect();
            mean_space_landmarks(&mean_corr, &pairs, l.reg).context(|| "mean-space landmarks".into())?
        }
    };
    out.write("mean_landmarks.lms", &format_landmark_set(&mean_lms))?;

    let names: Vec<String> = l
        .ellipse_curves
        .iter()
        .flat_map(|c| [format!("{c}_max_diameter"), format!("{c}_min_diameter")])
        .collect();
    let mut report = MeasurementReport::new(names);
    for s in &l.subjects {
        let corr = load_point_set(&s.correspondences).context(|| format!("subject '{}'", s.id))?;
        let pred = if l.method == "procrustes" {
            procrustes_fit_landmarks(&mean_lms, &corr, &mean_corr, false)
        } else {
            infer_landmarks(&mean_corr, &mean_lms, &corr, l.reg)
        }
        .context(|| format!("subject '{}'", s.id))?;
        out.write(&format!("predicted/{}.lms", s.id), &format_landmark_set(&pred))?;
        if let Some(p) = &s.landmarks {
            let truth = load_landmark_set(p).context(|| format!("subject '{}' truth", s.id))?;
            let errors = landmark_errors(&pred, &truth).context(|| format!("subject '{}'", s.id))?;
            let t = diameters(&truth, &l.ellipse_curves, &s.id)?;
            let q = diameters(&pred, &l.ellipse_curves, &s.id)?;
            report
                .push(s.id.clone(), t, q, errors)
                .context(|| format!("subject '{}'", s.id))?;
        }
    }
    let mut md = report_head("ssm-bench infer-landmarks", cfg, cfg.seed.unwrap_or(0));
    if !report.is_empty() {
        out.write("landmark_errors.csv", &report.landmark_errors_csv())?;
        out.write("measurements.csv", &report.measurements_csv())?;
        let overall: f64 = report.landmark_errors.iter().map(|e| e.overall).sum::<f64>() / report.len() as f64;
        let _ = writeln!(
            md,
            "Mean landmark error over {} subjects: {overall:.6} mm\n",
            report.len()
        );
        if l.t_test && report.len() >= 2 && !report.measurements.is_empty() {
            let rows = report
                .measurements
                .iter()
                .enumerate()
                .map(|(m, name)| {
                    let t: Vec<f64> = report.truth.iter().map(|r| r[m]).collect();
                    let p: Vec<f64> = report.predicted.iter().map(|r| r[m]).collect();
                    Ok((
                        name.clone(),
                        paired_t_test(&p, &t).context(|| format!("t-test on {name}"))?,
                    ))
                })
                .collect::<CliResult<Vec<_>>>()?;
            out.write("t_tests.csv", &t_test_csv(&rows))?;
            md.push_str("Paired t-tests (predicted vs truth) are in t_tests.csv.\n");
        }
    } else {
        md.push_str("No ground-truth landmarks were given; only predictions were written.\n");
    }
    out.write("report.md", &md)?;
    Ok(())
}
