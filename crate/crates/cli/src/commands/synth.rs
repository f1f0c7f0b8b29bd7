use ssm_bench_core::seed::derive_seed;
use ssm_bench_core::shape_data::io::{format_landmark_set, format_point_set, format_volume};
use ssm_bench_core::synthetic::{
    generate_box_bump_ensemble, generate_box_bump_shapes, generate_side_bump_outlier, latent_csv, mask_csv,
};

use crate::config::RunConfig;
use crate::error::{CliResult, Context};
use crate::output::OutDir;

pub fn run(cfg: &RunConfig, seed: u64, out: &mut OutDir) -> CliResult<()> {
    let s = &cfg.synth;
    let spec = s.spec(derive_seed(seed, "synth"));
    let data = if s.write_volumes {
        generate_box_bump_ensemble(&spec, s.n_shapes)
    } else {
        let positions: Vec<f64> = (0..s.n_shapes).map(|i| i as f64 / (s.n_shapes - 1) as f64).collect();
        generate_box_bump_shapes(&spec, &positions, false)
    }
    .context(|| "generating box-bump ensemble".into())?;
    for (i, shape) in data.ensemble.shapes().iter().enumerate() {
        out.write(&format!("shapes/shape_{i:03}.pts"), &format_point_set(shape))?;
        out.write(
            &format!("landmarks/shape_{i:03}.lms"),
            &format_landmark_set(&data.truth.landmarks[i]),
        )?;
    }
    for (i, v) in data.volumes.iter().enumerate() {
        out.write(&format!("volumes/shape_{i:03}.sdt"), &format_volume(v))?;
    }
    out.write("truth/latent.csv", &latent_csv(&data.truth))?;
    if s.outlier {
        let o = generate_side_bump_outlier(&spec, 0.5, &s.side_bump()).context(|| "generating outlier".into())?;
        out.write("outlier/outlier.pts", &format_point_set(&o.points))?;
        out.write("outlier/outlier.lms", &format_landmark_set(&o.truth.landmarks[0]))?;
        if s.write_volumes {
            out.write("outlier/outlier.sdt", &format_volume(&o.volume))?;
        }
        out.write("truth/outlier_mask.csv", &mask_csv(&o.truth.lesion_mask))?;
    }
    let manifest = out.manifest()?;
    out.write("manifest.csv", &manifest)?;
    print!("{manifest}");
    Ok(())
}
