//! Landmark and measurement inference: thin-plate-spline warps between mean
//! and subject space, Procrustes landmark fits, ellipse diameters, landmark
//! error statistics and paired t-tests.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix2, Matrix3, SymmetricEigen, Vector3};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::shape_data::{rigid_align, LandmarkSet, PointSet};

/// 3-D thin-plate spline f(p) = Aᵀ[1, p] + Σ_i w_i |p − s_i|.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsWarp {
    source: PointSet,
    target: PointSet,
    /// M×3 kernel weights.
    weights: DMatrix<f64>,
    /// 4×3 affine part; row 0 is the translation.
    affine: DMatrix<f64>,
    reg: f64,
}

impl TpsWarp {
    pub fn source(&self) -> &PointSet {
        &self.source
    }

    pub fn target(&self) -> &PointSet {
        &self.target
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn affine(&self) -> &DMatrix<f64> {
        &self.affine
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.affine[(0, c)]
                + self.affine[(1, c)] * p[0]
                + self.affine[(2, c)] * p[1]
                + self.affine[(3, c)] * p[2];
        }
        for (i, s) in self.source.points().enumerate() {
            let r = dist3(&p, s);
            if r > 0.0 {
                for (c, o) in out.iter_mut().enumerate() {
                    *o += self.weights[(i, c)] * r;
                }
            }
        }
        out
    }
}

fn dist3(a: &[f64], b: &[f64]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn require_3d(ps: &PointSet, what: &str) -> Result<()> {
    if ps.dim() != 3 {
        return Err(Error::invalid(format!("{what} must be 3-d points")));
    }
    Ok(())
}

/// Fits the interpolating (reg = 0) or smoothing TPS mapping `source` onto
/// `target` with kernel U(r) = r. Smoothing subtracts `reg` from the kernel
/// diagonal, i.e. adds it to the diagonal of the bending-energy kernel −r,
/// so larger `reg` always gives smaller, smoother kernel weights.
pub fn fit_tps(source: &PointSet, target: &PointSet, reg: f64) -> Result<TpsWarp> {
    require_3d(source, "TPS source")?;
    require_3d(target, "TPS target")?;
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: source.len(),
            got: target.len(),
        });
    }
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(Error::invalid(format!("TPS regularization must be >= 0, got {reg}")));
    }
    let m = source.len();
    if m < 4 {
        return Err(Error::invalid(format!("TPS needs at least 4 control points, got {m}")));
    }
    for i in 0..m {
        for j in 0..i {
            if dist3(source.point(i), source.point(j)) == 0.0 {
                return Err(Error::Singular(format!("TPS control points {j} and {i} coincide")));
            }
        }
    }
    check_not_coplanar(source)?;

    let n = m + 4;
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, 3);
    for i in 0..m {
        let pi = source.point(i);
        for j in 0..m {
            a[(i, j)] = dist3(pi, source.point(j));
        }
        a[(i, i)] -= reg;
        a[(i, m)] = 1.0;
        a[(m, i)] = 1.0;
        for c in 0..3 {
            a[(i, m + 1 + c)] = pi[c];
            a[(m + 1 + c, i)] = pi[c];
            rhs[(i, c)] = target.point(i)[c];
        }
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("TPS linear system is singular".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("TPS linear system is singular".into()));
    }
    Ok(TpsWarp {
        source: source.clone(),
        target: target.clone(),
        weights: sol.rows(0, m).into_owned(),
        affine: sol.rows(m, 4).into_owned(),
        reg,
    })
}

fn check_not_coplanar(ps: &PointSet) -> Result<()> {
    let c = ps.centroid();
    let mut cov = Matrix3::zeros();
    for p in ps.points() {
        let d = Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]);
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, l)| (i, *l))
        .unwrap();
    let lmax = eig.eigenvalues.max();
    if lmin <= 1e-12 * lmax.max(f64::MIN_POSITIVE) {
        let normal = eig.eigenvectors.column(imin);
        let plane: Vec<String> = (0..ps.len()).map(|i| i.to_string()).collect();
        return Err(Error::Singular(format!(
            "TPS control points {} are coplanar (normal {:.3?})",
            plane.join(","),
            [normal[0], normal[1], normal[2]]
        )));
    }
    Ok(())
}

pub fn warp(w: &TpsWarp, pts: &PointSet) -> Result<PointSet> {
    require_3d(pts, "warped points")?;
    let out: Vec<[f64; 3]> = pts.points().map(|p| w.apply_point([p[0], p[1], p[2]])).collect();
    PointSet::from_points3(&out)
}

/// Warps mean-space landmarks into subject space with a TPS fitted on the
/// mean → subject correspondences.
pub fn infer_landmarks(
    mean_correspondences: &PointSet,
    mean_landmarks: &LandmarkSet,
    subject_correspondences: &PointSet,
    reg: f64,
) -> Result<LandmarkSet> {
    let w = fit_tps(mean_correspondences, subject_correspondences, reg)?;
    mean_landmarks.try_map(|ps| warp(&w, ps))
}

/// Mean-space landmarks for a groupwise model: every subject's landmarks are
/// warped subject → mean and the warped copies are averaged point by point.
pub fn mean_space_landmarks(
    mean_correspondences: &PointSet,
    subjects: &[(PointSet, LandmarkSet)],
    reg: f64,
) -> Result<LandmarkSet> {
    let Some((_, first)) = subjects.first() else {
        return Err(Error::invalid("no subjects to average"));
    };
    let mut acc: Vec<Vec<f64>> = first
        .curves()
        .iter()
        .map(|c| vec![0.0; c.points.coords().len()])
        .collect();
    for (corr, lms) in subjects {
        let w = fit_tps(corr, mean_correspondences, reg)?;
        check_matching(first, lms)?;
        for (a, c) in acc.iter_mut().zip(lms.curves()) {
            let warped = warp(&w, &c.points)?;
            a.iter_mut().zip(warped.coords()).for_each(|(x, y)| *x += y);
        }
    }
    let n = subjects.len() as f64;
    let mut it = acc.into_iter();
    first.try_map(|_| {
        let coords: Vec<f64> = it.next().unwrap().into_iter().map(|x| x / n).collect();
        PointSet::new(3, coords)
    })
}

/// Maps predicted landmarks through the transform that aligns the mean
/// correspondences onto the subject correspondences.
pub fn procrustes_fit_landmarks(
    predicted: &LandmarkSet,
    subject_correspondences: &PointSet,
    mean_correspondences: &PointSet,
    allow_scale: bool,
) -> Result<LandmarkSet> {
    let t = rigid_align(mean_correspondences, subject_correspondences, allow_scale)?;
    predicted.try_map(|ps| Ok(t.apply(ps)))
}

/// Maximum and minimum diameters (2a, 2b) of the ellipse fitted to a roughly
/// planar ring of 3-D points.
pub fn fit_ellipse_diameters(ring: &PointSet) -> Result<(f64, f64)> {
    require_3d(ring, "ellipse ring")?;
    let n = ring.len();
    if n < 5 {
        return Err(Error::invalid(format!("ellipse fit needs at least 5 points, got {n}")));
    }
    let c = ring.centroid();
    let mut cov = Matrix3::zeros();
    let diffs: Vec<Vector3<f64>> = ring
        .points()
        .map(|p| Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]))
        .collect();
    for d in &diffs {
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let e1 = eig.eigenvectors.column(order[0]).into_owned();
    let e2 = eig.eigenvectors.column(order[1]).into_owned();
    let xy: Vec<(f64, f64)> = diffs.iter().map(|d| (d.dot(&e1), d.dot(&e2))).collect();
    let scale = (xy.iter().map(|(x, y)| x * x + y * y).sum::<f64>() / n as f64).sqrt();
    if !(scale > 0.0) {
        return Err(Error::Singular("ellipse ring points coincide".into()));
    }
    let xy: Vec<(f64, f64)> = xy.iter().map(|(x, y)| (x / scale, y / scale)).collect();
    let (a, b) = direct_ellipse_axes(&xy)?;
    Ok((2.0 * a * scale, 2.0 * b * scale))
}

/// Direct least-squares ellipse fit (Fitzgibbon; numerically stable
/// Halíř–Flusser partition). Returns semi-axes (a, b), a ≥ b.
fn direct_ellipse_axes(pts: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = pts.len();
    let d1 = DMatrix::from_fn(n, 3, |i, j| {
        let (x, y) = pts[i];
        [x * x, x * y, y * y][j]
    });
    let d2 = DMatrix::from_fn(n, 3, |i, j| {
        let (x, y) = pts[i];
        [x, y, 1.0][j]
    });
    let s1 = d1.tr_mul(&d1);
    let s2 = d1.tr_mul(&d2);
    let s3 = d2.tr_mul(&d2);
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::Singular("ellipse points are collinear".into()))?;
    let t = -(&s3_inv * s2.transpose());
    let m = &s1 + &s2 * &t;
    // premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]]
    let m = Matrix3::new(
        m[(2, 0)] / 2.0,
        m[(2, 1)] / 2.0,
        m[(2, 2)] / 2.0,
        -m[(1, 0)],
        -m[(1, 1)],
        -m[(1, 2)],
        m[(0, 0)] / 2.0,
        m[(0, 1)] / 2.0,
        m[(0, 2)] / 2.0,
    );
    let mut best: Option<(Vector3<f64>, f64)> = None;
    for lambda in m.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let svd = (m - Matrix3::identity() * lambda.re).svd(false, true);
        let v_t = svd.v_t.unwrap();
        let imin = svd.singular_values.imin();
        let v: Vector3<f64> = v_t.row(imin).transpose();
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.as_ref().is_none_or(|(_, c)| cond > *c) {
            best = Some((v, cond));
        }
    }
    let (a1, _) = best.ok_or_else(|| Error::Numerical("conic fit is not an ellipse".into()))?;
    let a2 = t * a1;
    let (a, b, c, d, e, f) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);
    let q = Matrix2::new(2.0 * a, b, b, 2.0 * c);
    let centre = q
        .try_inverse()
        .ok_or_else(|| Error::Numerical("conic fit is not an ellipse".into()))?
        * nalgebra::Vector2::new(-d, -e);
    let f0 = f + 0.5 * (d * centre[0] + e * centre[1]);
    let eig = SymmetricEigen::new(Matrix2::new(a, b / 2.0, b / 2.0, c));
    let (mu1, mu2) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let r1 = -f0 / mu1;
    let r2 = -f0 / mu2;
    if !(r1 > 0.0 && r2 > 0.0) {
        return Err(Error::Numerical("conic fit is not an ellipse".into()));
    }
    let (r1, r2) = (r1.sqrt(), r2.sqrt());
    Ok((r1.max(r2), r1.min(r2)))
}

/// Per-curve mean Euclidean distance between predicted and true landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkErrors {
    pub per_curve: Vec<(String, f64)>,
    /// Mean over all landmark points.
    pub overall: f64,
}

fn check_matching(a: &LandmarkSet, b: &LandmarkSet) -> Result<()> {
    if a.curves().len() != b.curves().len() {
        return Err(Error::invalid(format!(
            "landmark sets have {} and {} curves",
            a.curves().len(),
            b.curves().len()
        )));
    }
    for (x, y) in a.curves().iter().zip(b.curves()) {
        if x.name != y.name || x.points.len() != y.points.len() {
            return Err(Error::invalid(format!(
                "curve mismatch: '{}' ({} points) vs '{}' ({} points)",
                x.name,
                x.points.len(),
                y.name,
                y.points.len()
            )));
        }
    }
    Ok(())
}

pub fn landmark_errors(predicted: &LandmarkSet, truth: &LandmarkSet) -> Result<LandmarkErrors> {
    check_matching(predicted, truth)?;
    let mut total = 0.0;
    let mut count = 0usize;
    let per_curve = predicted
        .curves()
        .iter()
        .zip(truth.curves())
        .map(|(p, t)| {
            let s: f64 = p.points.points().zip(t.points.points()).map(|(a, b)| dist3(a, b)).sum();
            total += s;
            count += p.points.len();
            (p.name.clone(), s / p.points.len() as f64)
        })
        .collect();
    Ok(LandmarkErrors {
        per_curve,
        overall: if count > 0 { total / count as f64 } else { 0.0 },
    })
}

/// Per-sample measurements and landmark errors for one inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementReport {
    pub sample_ids: Vec<String>,
    /// Measurement names, e.g. `max_diameter`.
    pub measurements: Vec<String>,
    /// truth[s][m] and predicted[s][m] in mm.
    pub truth: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
    pub landmark_errors: Vec<LandmarkErrors>,
}

impl MeasurementReport {
    pub fn new(measurements: Vec<String>) -> Self {
        Self {
            sample_ids: Vec::new(),
            measurements,
            truth: Vec::new(),
            predicted: Vec::new(),
            landmark_errors: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        id: impl Into<String>,
        truth: Vec<f64>,
        predicted: Vec<f64>,
        errors: LandmarkErrors,
    ) -> Result<()> {
        if truth.len() != self.measurements.len() || predicted.len() != self.measurements.len() {
            return Err(Error::DimensionMismatch {
                expected: self.measurements.len(),
                got: truth.len().min(predicted.len()),
            });
        }
        self.sample_ids.push(id.into());
        self.truth.push(truth);
        self.predicted.push(predicted);
        self.landmark_errors.push(errors);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// |predicted − truth| per sample and measurement.
    pub fn abs_differences(&self) -> Vec<Vec<f64>> {
        self.truth
            .iter()
            .zip(&self.predicted)
            .map(|(t, p)| t.iter().zip(p).map(|(a, b)| (a - b).abs()).collect())
            .collect()
    }

    pub fn measurements_csv(&self) -> String {
        let mut out = String::from("sample,measurement,truth_mm,predicted_mm,abs_diff_mm\n");
        for (s, id) in self.sample_ids.iter().enumerate() {
            for (m, name) in self.measurements.iter().enumerate() {
                let (t, p) = (self.truth[s][m], self.predicted[s][m]);
                let _ = writeln!(out, "{id},{name},{t},{p},{}", (t - p).abs());
            }
        }
        out
    }

    pub fn landmark_errors_csv(&self) -> String {
        let mut out = String::from("sample,curve,mean_error_mm\n");
        for (id, e) in self.sample_ids.iter().zip(&self.landmark_errors) {
            for (curve, v) in &e.per_curve {
                let _ = writeln!(out, "{id},{curve},{v}");
            }
            let _ = writeln!(out, "{id},all,{}", e.overall);
        }
        out
    }
}

/// Paired two-sided t-test (a difference test, not an equivalence test).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// Differences have zero variance but nonzero mean; t is infinite, p = 0.
    pub degenerate: bool,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                df,
                p: 1.0,
                degenerate: false,
            }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                df,
                p: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest {
        t,
        df,
        p,
        degenerate: false,
    })
}

pub fn t_test_csv(rows: &[(String, TTest)]) -> String {
    let mut out = String::from("comparison,t,df,p,degenerate\n");
    for (name, r) in rows {
        let _ = writeln!(out, "{name},{},{},{},{}", r.t, r.df, r.p, r.degenerate);
    }
    out
}
