//! Compactness, generalization and specificity curves as functions of the
//! number of modes K.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::shape_data::{flatten, rigid_align, unflatten, CorrespondenceEnsemble, ShapeVector};
use crate::shape_space::{fit_pca, ModeRule, PcaSubspace};

/// Metric values for K = 1..=K_max (index 0 holds K = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurve {
    pub name: String,
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

impl MetricCurve {
    pub fn k_max(&self) -> usize {
        self.values.len()
    }

    /// Value at 1-based K.
    pub fn at(&self, k: usize) -> f64 {
        self.values[k - 1]
    }
}

/// Pose handling for the left-out shape in generalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LooAlignment {
    /// Use the left-out shape as given.
    None,
    /// Rigidly align it to the leave-one-out mean first.
    #[default]
    Rigid,
    Similarity,
}

/// C(K) = Σ_{j≤K} λ_j over the full eigenvalue spectrum.
pub fn compactness(sub: &PcaSubspace, k_max: usize) -> Result<MetricCurve> {
    let spectrum = sub.spectrum();
    if k_max == 0 || k_max > spectrum.len() {
        return Err(Error::invalid(format!(
            "compactness K_max must lie in 1..={}, got {k_max}",
            spectrum.len()
        )));
    }
    let values = spectrum[..k_max]
        .iter()
        .scan(0.0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    Ok(MetricCurve {
        name: "compactness".into(),
        values,
        stderr: None,
    })
}

/// Leave-one-out generalization: G(K) = mean over n of ‖z_n(K) − z_n‖²,
/// where z_n(K) reconstructs the left-out shape from a model of the other
/// N−1 shapes using K modes. Modes beyond the numerical rank of a fold carry
/// no variance and are not used.
pub fn generalization(ens: &CorrespondenceEnsemble, k_max: usize, alignment: LooAlignment) -> Result<MetricCurve> {
    let n = ens.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "generalization needs at least 3 shapes, got {n}"
        )));
    }
    if k_max == 0 || k_max > n - 2 {
        return Err(Error::RankExceeded {
            requested: k_max,
            available: n - 2,
        });
    }
    let folds: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| loo_fold_errors(ens, i, k_max, alignment))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; k_max];
    let mut sq = vec![0.0; k_max];
    for fold in &folds {
        for (k, e) in fold.iter().enumerate() {
            values[k] += e;
            sq[k] += e * e;
        }
    }
    let nf = n as f64;
    let stderr = values
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let mean = s / nf;
            ((q / nf - mean * mean).max(0.0) * nf / (nf - 1.0)).sqrt() / nf.sqrt()
        })
        .collect();
    values.iter_mut().for_each(|v| *v /= nf);
    Ok(MetricCurve {
        name: "generalization".into(),
        values,
        stderr: Some(stderr),
    })
}

fn loo_fold_errors(
    ens: &CorrespondenceEnsemble,
    left_out: usize,
    k_max: usize,
    alignment: LooAlignment,
) -> Result<Vec<f64>> {
    let rest = ens.without(left_out)?;
    let sub = fit_pca(&rest, ModeRule::VarianceFraction(1.0))?;
    let shape = &ens.shapes()[left_out];
    let z: ShapeVector = match alignment {
        LooAlignment::None => flatten(shape),
        LooAlignment::Rigid | LooAlignment::Similarity => {
            let mean = unflatten(sub.mean(), ens.dim())?;
            let t = rigid_align(shape, &mean, alignment == LooAlignment::Similarity)?;
            flatten(&t.apply(shape))
        }
    };
    let alpha = sub.project(&z)?.0;
    let mut recon = sub.mean().clone();
    let mut out = Vec::with_capacity(k_max);
    for k in 0..k_max {
        if k < sub.n_modes() {
            recon.axpy(alpha[k], &sub.modes().column(k), 1.0);
        }
        out.push((&recon - &z).norm_squared());
    }
    Ok(out)
}

/// S(K): mean squared distance from J random model shapes (K modes) to their
/// nearest training shape. For each K in order, J samples are drawn in
/// sequence from `rng`, each consuming K standard-normal variates.
pub fn specificity<R: Rng + ?Sized>(
    sub: &PcaSubspace,
    train: &CorrespondenceEnsemble,
    k_max: usize,
    samples: usize,
    rng: &mut R,
) -> Result<MetricCurve> {
    if train.is_empty() {
        return Err(Error::invalid("specificity needs a nonempty training set"));
    }
    if samples == 0 {
        return Err(Error::invalid("specificity needs at least one sample"));
    }
    if k_max == 0 || k_max > sub.n_modes() {
        return Err(Error::RankExceeded {
            requested: k_max,
            available: sub.n_modes(),
        });
    }
    let train_vecs = train.vectors();
    if train_vecs[0].len() != sub.mean().len() {
        return Err(Error::DimensionMismatch {
            expected: sub.mean().len(),
            got: train_vecs[0].len(),
        });
    }
    let mut values = Vec::with_capacity(k_max);
    let mut stderr = Vec::with_capacity(k_max);
    let j = samples as f64;
    for k in 1..=k_max {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let s = sub.sample_random(k, rng)?;
            let d = train_vecs
                .iter()
                .map(|t| (t - &s).norm_squared())
                .fold(f64::INFINITY, f64::min);
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / j;
        values.push(mean);
        let var = if samples > 1 {
            ((sum_sq / j - mean * mean).max(0.0)) * j / (j - 1.0)
        } else {
            0.0
        };
        stderr.push((var / j).sqrt());
    }
    Ok(MetricCurve {
        name: "specificity".into(),
        values,
        stderr: Some(stderr),
    })
}

/// Per-K comparison of two models' curves. `a_lower` is true where A's value
/// is strictly lower, which the formula-based reading calls "better" for all
/// three metrics; plots that label compactness "higher is better" read the
/// opposite column.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveComparison {
    pub metric: String,
    pub rows: Vec<(usize, f64, f64, Ordering)>,
}

pub fn compare_curves(a: &MetricCurve, b: &MetricCurve) -> Result<CurveComparison> {
    if a.name != b.name {
        return Err(Error::invalid(format!("cannot compare {} with {}", a.name, b.name)));
    }
    let rows = a
        .values
        .iter()
        .zip(&b.values)
        .enumerate()
        .map(|(k, (x, y))| (k + 1, *x, *y, x.total_cmp(y)))
        .collect();
    Ok(CurveComparison {
        metric: a.name.clone(),
        rows,
    })
}

impl CurveComparison {
    /// CSV with both orderings: `lower_wins` names the model with the lower
    /// value, `higher_wins` the one with the higher value.
    pub fn to_csv(&self, name_a: &str, name_b: &str) -> String {
        let mut out = format!("K,{name_a},{name_b},lower_wins,higher_wins\n");
        for (k, x, y, ord) in &self.rows {
            let (lo, hi) = match ord {
                Ordering::Less => (name_a, name_b),
                Ordering::Greater => (name_b, name_a),
                Ordering::Equal => ("tie", "tie"),
            };
            let _ = writeln!(out, "{k},{x},{y},{lo},{hi}");
        }
        out
    }
}

/// Metric table with columns K, compactness, generalization, specificity,
/// specificity_stderr. With `rms_per_point`, the squared-distance metrics
/// are reported as `sqrt(value / M)` in mm and the columns are suffixed
/// `_rms_mm`.
pub fn metrics_csv(
    compactness: &MetricCurve,
    generalization: &MetricCurve,
    specificity: &MetricCurve,
    n_points: usize,
    rms_per_point: bool,
) -> String {
    let k_max = compactness.k_max().min(generalization.k_max()).min(specificity.k_max());
    let m = n_points as f64;
    let conv = |v: f64| if rms_per_point { (v / m).sqrt() } else { v };
    let mut out = if rms_per_point {
        String::from("K,compactness,generalization_rms_mm,specificity_rms_mm,specificity_stderr\n")
    } else {
        String::from("K,compactness,generalization,specificity,specificity_stderr\n")
    };
    for k in 1..=k_max {
        let se = specificity.stderr.as_ref().map_or(0.0, |s| s[k - 1]);
        let se = if rms_per_point {
            // delta method on sqrt(v / M)
            let v = specificity.at(k);
            if v > 0.0 {
                se / (2.0 * (v * m).sqrt())
            } else {
                0.0
            }
        } else {
            se
        };
        let _ = writeln!(
            out,
            "{k},{},{},{},{}",
            compactness.at(k),
            conv(generalization.at(k)),
            conv(specificity.at(k)),
            se
        );
    }
    out
}
