//! Least-squares orthogonal alignment (Kabsch/Umeyama) and generalized
//! Procrustes analysis.

use nalgebra::{DMatrix, DVector};

use super::{CorrespondenceEnsemble, PointSet, SimilarityTransform};
use crate::error::{Error, Result};

fn centered(ps: &PointSet) -> (DMatrix<f64>, DVector<f64>) {
    let c = ps.centroid();
    let mut m = ps.to_matrix();
    for mut col in m.column_iter_mut() {
        col -= &c;
    }
    (m, c)
}

/// Transform `T` minimising `Σ‖T(source_i) − target_i‖²`. The rotation is
/// always proper; a reflection in the SVD solution is corrected by flipping
/// the direction of the smallest singular value.
pub fn rigid_align(source: &PointSet, target: &PointSet, allow_scale: bool) -> Result<SimilarityTransform> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            got: target.dim(),
        });
    }
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: source.len(),
            got: target.len(),
        });
    }
    let d = source.dim();
    if source.len() < d {
        return Err(Error::invalid(format!(
            "alignment needs at least {d} points, got {}",
            source.len()
        )));
    }
    let (xs, cs) = centered(source);
    let (xt, ct) = centered(target);
    let src_ss = xs.norm_squared();
    let scale_ref = xt.norm_squared().max(src_ss).max(1.0);
    if src_ss <= 1e-24 * scale_ref {
        return Err(Error::Singular("source points are all coincident".into()));
    }

    let cross = &xt * xs.transpose();
    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let sv = svd.singular_values;
    let mut diag = DVector::from_element(d, 1.0);
    if (&u * &v_t).determinant() < 0.0 {
        let smallest = (0..d).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).expect("nonempty");
        diag[smallest] = -1.0;
    }
    let rotation = &u * DMatrix::from_diagonal(&diag) * &v_t;
    let scale = if allow_scale {
        sv.iter().zip(diag.iter()).map(|(s, e)| s * e).sum::<f64>() / src_ss
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(Error::Singular("non-positive similarity scale".into()));
    }
    let translation = &ct - &rotation * &cs * scale;
    Ok(SimilarityTransform {
        rotation,
        translation,
        scale,
    })
}

/// Output of [`generalized_procrustes`].
#[derive(Debug, Clone)]
pub struct ProcrustesResult {
    pub aligned: CorrespondenceEnsemble,
    /// Maps each input shape onto its aligned copy.
    pub transforms: Vec<SimilarityTransform>,
    pub iterations: usize,
    pub converged: bool,
}

fn centroid_size(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Iteratively aligns every shape to the running mean until the mean moves
/// less than `tol` (Frobenius norm, mm). The reference starts as the mean of
/// the centred shapes, so an ensemble that is already aligned comes back
/// with identity transforms. The aligned mean is centred at the origin.
pub fn generalized_procrustes(
    ens: &CorrespondenceEnsemble,
    allow_scale: bool,
    tol: f64,
    max_iters: usize,
) -> Result<ProcrustesResult> {
    if ens.len() < 2 {
        return Err(Error::invalid(format!(
            "Procrustes analysis needs at least 2 shapes, got {}",
            ens.len()
        )));
    }
    let dim = ens.dim();
    let centred: Vec<DMatrix<f64>> = ens.shapes().iter().map(|s| centered(s).0).collect();
    let mut reference = centred
        .iter()
        .fold(DMatrix::zeros(dim, ens.n_points()), |acc, m| acc + m)
        / ens.len() as f64;
    let typical = centroid_size(&centred[0]).max(1e-300);
    if centroid_size(&reference) < 1e-8 * typical {
        reference = centred[0].clone();
    }
    let target_size = centroid_size(&reference);

    let mut transforms = vec![SimilarityTransform::identity(dim); ens.len()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let ref_ps = PointSet::from_matrix(&reference)?;
        for (t, s) in transforms.iter_mut().zip(ens.shapes()) {
            *t = rigid_align(s, &ref_ps, allow_scale)?;
        }
        let mut mean = DMatrix::zeros(dim, ens.n_points());
        for (t, s) in transforms.iter().zip(ens.shapes()) {
            mean += t.apply(s).to_matrix();
        }
        mean /= ens.len() as f64;
        let c = mean.column_mean();
        for mut col in mean.column_iter_mut() {
            col -= &c;
        }
        if allow_scale {
            let size = centroid_size(&mean);
            if size > 0.0 {
                mean *= target_size / size;
            }
        }
        let change = (&mean - &reference).norm();
        reference = mean;
        if change < tol {
            converged = true;
            break;
        }
    }
    // Final pass so transforms match the returned reference exactly.
    let ref_ps = PointSet::from_matrix(&reference)?;
    for (t, s) in transforms.iter_mut().zip(ens.shapes()) {
        *t = rigid_align(s, &ref_ps, allow_scale)?;
    }
    let aligned = CorrespondenceEnsemble::new(transforms.iter().zip(ens.shapes()).map(|(t, s)| t.apply(s)).collect())?;
    Ok(ProcrustesResult {
        aligned,
        transforms,
        iterations,
        converged,
    })
}
