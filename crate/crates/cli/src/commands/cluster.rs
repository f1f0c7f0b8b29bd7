use std::fmt::Write as _;

use ssm_bench_core::cluster::{cluster_mean_shapes, elbow, elbow_csv, kmedoids, labels_csv};
use ssm_bench_core::seed::{derive_seed, rng_from_seed};
use ssm_bench_core::shape_data::io::format_point_set;

use super::{file_stem, load_ensemble, report_head};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::output::OutDir;

pub fn run(cfg: &RunConfig, seed: u64, out: &mut OutDir) -> CliResult<()> {
    let c = &cfg.cluster;
    let (ens, paths) = load_ensemble(&c.shapes, "cluster shapes")?;
    let vectors = ens.vectors();
    let k_max = c.k_max.min(vectors.len());
    if k_max < 2 {
        return Err(CliError::config("cluster: need at least 2 shapes"));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "cluster"));
    let el = elbow(&vectors, k_max, &mut rng, c.restarts).context(|| "elbow analysis".into())?;
    let k = c.k.unwrap_or(el.k_star);
    if k == 0 || k > k_max {
        return Err(CliError::config(format!("cluster.k = {k} outside 1..={k_max}")));
    }
    let chosen = &el.results[k - 1];
    out.write("elbow.csv", &elbow_csv(&el.curve))?;
    out.write("labels.csv", &labels_csv(&chosen.labels))?;
    for (i, m) in cluster_mean_shapes(&ens, &chosen.labels)
        .context(|| "cluster means".into())?
        .iter()
        .enumerate()
    {
        out.write(&format!("cluster_means/cluster_{i}.pts"), &format_point_set(m))?;
    }
    let mut report = report_head("ssm-bench cluster", cfg, seed);
    let _ = writeln!(
        report,
        "Elbow choice k* = {} (k_max = {k_max}); using k = {k}, variance explained {:.4}.\n",
        el.k_star, chosen.variance_explained
    );
    if c.medoids {
        let mut rng = rng_from_seed(derive_seed(seed, "kmedoids"));
        let med = kmedoids(&vectors, k, &mut rng, c.restarts).context(|| "k-medoids".into())?;
        let mut csv = String::from("cluster,shape_index,shape\n");
        report.push_str("Representatives (k-medoids):\n\n");
        for (ci, &idx) in med.medoids.as_deref().unwrap_or_default().iter().enumerate() {
            let _ = writeln!(csv, "{ci},{idx},{}", file_stem(&paths[idx]));
            let _ = writeln!(report, "- cluster {ci}: {}", file_stem(&paths[idx]));
        }
        out.write("medoids.csv", &csv)?;
    }
    out.write("report.md", &report)?;
    Ok(())
}
