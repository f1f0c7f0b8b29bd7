//! PCA shape spaces: fitting, projection, reconstruction and sampling.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::shape_data::{CorrespondenceEnsemble, ShapeVector};

/// Modes whose eigenvalue falls below this fraction of the largest are
/// treated as numerical noise.
pub const RELATIVE_EIGEN_FLOOR: f64 = 1e-12;

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeRule {
    Fixed(usize),
    /// Smallest K whose cumulative eigenvalue share reaches the fraction.
    VarianceFraction(f64),
}

/// Mean shape, orthonormal modes (columns) and their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaSubspace {
    mean: ShapeVector,
    modes: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    spectrum: Vec<f64>,
    total_variance: f64,
    dim: usize,
}

/// Coefficients α of a shape in a subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCoefficients(pub DVector<f64>);

impl ShapeCoefficients {
    pub fn zeros(k: usize) -> Self {
        Self(DVector::zeros(k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Smallest K such that the first K values of `spectrum` hold at least
/// `fraction` of its sum. An all-zero spectrum gives K = 0.
pub fn modes_for_fraction(spectrum: &[f64], fraction: f64) -> usize {
    let total: f64 = spectrum.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, l) in spectrum.iter().enumerate() {
        acc += l;
        if acc / total >= fraction {
            return k + 1;
        }
    }
    spectrum.len()
}

fn fix_sign(mut col: nalgebra::DVectorViewMut<'_, f64>) {
    let mut best = 0usize;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        col.neg_mut();
    }
}

/// Fits the PCA shape space of an ensemble. The sample covariance uses the
/// N−1 divisor; when N ≤ dM the N×N Gram matrix is decomposed instead of the
/// dM×dM covariance.
pub fn fit_pca(ens: &CorrespondenceEnsemble, rule: ModeRule) -> Result<PcaSubspace> {
    let n = ens.len();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 shapes, got {n}")));
    }
    let x = ens.data_matrix();
    let dm = x.ncols();
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut xc = x;
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n - 1) as f64;
    let max_modes = (n - 1).min(dm);

    let (mut values, vectors) = if n <= dm {
        let gram = &xc * xc.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        (eig.eigenvalues, Some(eig.eigenvectors))
    } else {
        let cov = xc.transpose() * &xc / denom;
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues, Some(eig.eigenvectors))
    };
    let vectors = vectors.expect("eigenvectors computed");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(max_modes);

    // Centering round-off leaves variances of order eps²·‖μ‖²; anything at
    // that level is indistinguishable from zero.
    let abs_floor = 1e-20 * mean.norm_squared().max(1.0);
    values.iter_mut().for_each(|v| {
        if *v < abs_floor {
            *v = 0.0;
        }
    });
    let spectrum: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut total_variance = xc.norm_squared() / denom;
    if total_variance < abs_floor {
        total_variance = 0.0;
    }
    let lead = spectrum.first().copied().unwrap_or(0.0);
    let rank = spectrum
        .iter()
        .take_while(|&&l| l > 0.0 && l > RELATIVE_EIGEN_FLOOR * lead)
        .count();

    let k = match rule {
        ModeRule::Fixed(k) => {
            if k > max_modes || k > rank {
                return Err(Error::RankExceeded {
                    requested: k,
                    available: rank,
                });
            }
            k
        }
        ModeRule::VarianceFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!("variance fraction must lie in (0, 1], got {f}")));
            }
            modes_for_fraction(&spectrum, f).min(rank)
        }
    };

    let mut modes = DMatrix::zeros(dm, k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        let col = if n <= dm {
            let v = vectors.column(idx);
            xc.transpose() * v / (denom * spectrum[j]).sqrt()
        } else {
            vectors.column(idx).into_owned()
        };
        modes.set_column(j, &col);
        fix_sign(modes.column_mut(j));
    }

    Ok(PcaSubspace {
        mean,
        modes,
        eigenvalues: spectrum[..k].to_vec(),
        spectrum,
        total_variance,
        dim: ens.dim(),
    })
}

impl PcaSubspace {
    /// Assembles a subspace from parts; modes must be orthonormal columns.
    pub fn from_parts(
        mean: ShapeVector,
        modes: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        total_variance: f64,
        dim: usize,
    ) -> Result<Self> {
        if modes.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: modes.nrows(),
            });
        }
        if modes.ncols() != eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: modes.ncols(),
                got: eigenvalues.len(),
            });
        }
        if dim == 0 || !mean.len().is_multiple_of(dim) {
            return Err(Error::invalid("mean length not divisible by dimension"));
        }
        if eigenvalues.iter().any(|&l| l < 0.0 || !l.is_finite()) || eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("eigenvalues must be nonnegative and descending"));
        }
        let gram = modes.transpose() * &modes;
        let off = (gram - DMatrix::identity(modes.ncols(), modes.ncols())).amax();
        if off > 1e-8 {
            return Err(Error::invalid(format!("modes are not orthonormal (error {off:e})")));
        }
        Ok(Self {
            spectrum: eigenvalues.clone(),
            mean,
            modes,
            eigenvalues,
            total_variance,
            dim,
        })
    }

    pub fn mean(&self) -> &ShapeVector {
        &self.mean
    }

    /// dM×K matrix of modes.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// All covariance eigenvalues (up to min(N−1, dM)), descending, including
    /// those of discarded modes.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Number of retained modes K.
    pub fn n_modes(&self) -> usize {
        self.modes.ncols()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_points(&self) -> usize {
        self.mean.len() / self.dim
    }

    /// Share of total variance captured by the leading mode.
    pub fn leading_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.eigenvalues.first().copied().unwrap_or(0.0) / self.total_variance
        } else {
            0.0
        }
    }

    /// Subspace keeping only the first `k` modes.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.n_modes() {
            return Err(Error::RankExceeded {
                requested: k,
                available: self.n_modes(),
            });
        }
        Ok(Self {
            mean: self.mean.clone(),
            modes: self.modes.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            spectrum: self.spectrum.clone(),
            total_variance: self.total_variance,
            dim: self.dim,
        })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// α = Uᵀ(x − μ).
    pub fn project(&self, x: &ShapeVector) -> Result<ShapeCoefficients> {
        self.check_len(x.len())?;
        Ok(ShapeCoefficients(self.modes.tr_mul(&(x - &self.mean))))
    }

    /// x(α) = Uα + μ.
    pub fn reconstruct(&self, a: &ShapeCoefficients) -> Result<ShapeVector> {
        if a.len() != self.n_modes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_modes(),
                got: a.len(),
            });
        }
        Ok(&self.modes * &a.0 + &self.mean)
    }

    /// μ + t·√λ_k·u_k for the 1-based mode index `k`.
    pub fn sample_mode(&self, k: usize, t: f64) -> Result<ShapeVector> {
        if k == 0 || k > self.n_modes() {
            return Err(Error::invalid(format!("mode {k} out of range 1..={}", self.n_modes())));
        }
        Ok(&self.mean + self.modes.column(k - 1) * (t * self.eigenvalues[k - 1].sqrt()))
    }

    /// Draws μ + Σ_{j≤k_use} n_j √λ_j u_j with standard-normal n_j, consuming
    /// exactly `k_use` normal variates from `rng` in mode order.
    pub fn sample_random<R: Rng + ?Sized>(&self, k_use: usize, rng: &mut R) -> Result<ShapeVector> {
        if k_use > self.n_modes() {
            return Err(Error::invalid(format!(
                "cannot sample with {k_use} modes; subspace has {}",
                self.n_modes()
            )));
        }
        let mut out = self.mean.clone();
        for j in 0..k_use {
            let z: f64 = rng.sample(StandardNormal);
            out.axpy(z * self.eigenvalues[j].sqrt(), &self.modes.column(j), 1.0);
        }
        Ok(out)
    }

    /// Text serialisation: header lines, then the mean and one line per mode.
    pub fn to_text(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        let _ = writeln!(out, "PCASUB1");
        let _ = writeln!(out, "dim: {}", self.dim);
        let _ = writeln!(out, "length: {}", self.mean.len());
        let _ = writeln!(out, "modes: {}", self.n_modes());
        let _ = writeln!(out, "total_variance: {}", self.total_variance);
        let _ = writeln!(out, "spectrum: {}", join(&mut self.spectrum.iter().copied()));
        let _ = writeln!(out, "eigenvalues: {}", join(&mut self.eigenvalues.iter().copied()));
        let _ = writeln!(out, "mean: {}", join(&mut self.mean.iter().copied()));
        for c in self.modes.column_iter() {
            let _ = writeln!(out, "mode: {}", join(&mut c.iter().copied()));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, m: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<(usize, Vec<f64>)> {
            let (i, l) = lines.next().ok_or_else(|| err(0, &format!("missing '{key}'")))?;
            let rest = l
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(':'))
                .ok_or_else(|| err(i + 1, &format!("expected '{key}:'")))?;
            let vals = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(i + 1, &format!("bad number '{t}'"))))
                .collect::<Result<Vec<_>>>()?;
            Ok((i + 1, vals))
        };
        match text.lines().next() {
            Some("PCASUB1") => {}
            _ => return Err(err(1, "missing PCASUB1 magic")),
        }
        field("PCASUB1").ok();
        let scalar = |(l, v): (usize, Vec<f64>)| -> Result<f64> {
            if v.len() == 1 {
                Ok(v[0])
            } else {
                Err(err(l, "expected a single value"))
            }
        };
        let dim = scalar(field("dim")?)? as usize;
        let len = scalar(field("length")?)? as usize;
        let k = scalar(field("modes")?)? as usize;
        let total_variance = scalar(field("total_variance")?)?;
        let (_, spectrum) = field("spectrum")?;
        let (_, eigenvalues) = field("eigenvalues")?;
        let (ml, mean) = field("mean")?;
        if mean.len() != len {
            return Err(err(ml, "mean length mismatch"));
        }
        let mut modes = DMatrix::zeros(len, k);
        for j in 0..k {
            let (l, col) = field("mode")?;
            if col.len() != len {
                return Err(err(l, "mode length mismatch"));
            }
            modes.set_column(j, &DVector::from_vec(col));
        }
        let mut sub = Self::from_parts(DVector::from_vec(mean), modes, eigenvalues, total_variance, dim)?;
        sub.spectrum = spectrum;
        Ok(sub)
    }

    /// CSV of the eigenvalue spectrum with individual and cumulative shares.
    pub fn spectrum_csv(&self) -> String {
        let total: f64 = self.spectrum.iter().sum();
        let mut out = String::from("mode,eigenvalue,fraction,cumulative_fraction,retained\n");
        let mut acc = 0.0;
        for (j, l) in self.spectrum.iter().enumerate() {
            acc += l;
            let (f, c) = if total > 0.0 {
                (l / total, acc / total)
            } else {
                (0.0, 0.0)
            };
            let _ = writeln!(out, "{},{},{},{},{}", j + 1, l, f, c, j < self.n_modes());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::shape_data::PointSet;

    fn random_ensemble(n: usize, m: usize, seed: u64) -> CorrespondenceEnsemble {
        let mut rng = rng_from_seed(seed);
        let shapes = (0..n)
            .map(|_| PointSet::new(3, (0..3 * m).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
            .collect();
        CorrespondenceEnsemble::new(shapes).unwrap()
    }

    #[test]
    fn two_shapes_span_a_line() {
        let a = PointSet::from_points3(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let b = PointSet::from_points3(&[[2.0, 0.0, 0.0], [1.0, 4.0, 0.0]]).unwrap();
        let ens = CorrespondenceEnsemble::new(vec![a, b]).unwrap();
        let sub = fit_pca(&ens, ModeRule::VarianceFraction(1.0)).unwrap();
        assert_eq!(sub.n_modes(), 1);
        assert_eq!(sub.spectrum().len(), 1);
        assert_eq!(sub.mean().as_slice(), &[1.0, 0.0, 0.0, 1.0, 2.0, 0.0]);
        assert!(fit_pca(&ens, ModeRule::Fixed(2)).is_err());
    }

    #[test]
    fn variance_rule_on_known_spectrum() {
        assert_eq!(modes_for_fraction(&[90.0, 8.0, 2.0], 0.97), 2);
        assert_eq!(modes_for_fraction(&[90.0, 8.0, 2.0], 0.9), 1);
        assert_eq!(modes_for_fraction(&[0.0, 0.0], 0.97), 0);
    }

    #[test]
    fn modes_are_orthonormal_and_sorted() {
        let ens = random_ensemble(8, 10, 1);
        let sub = fit_pca(&ens, ModeRule::Fixed(7)).unwrap();
        let g = sub.modes().transpose() * sub.modes();
        assert!((g - DMatrix::identity(7, 7)).amax() < 1e-8);
        assert!(sub.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        let sum: f64 = sub.spectrum().iter().sum();
        assert!((sum - sub.total_variance()).abs() <= 1e-8 * sub.total_variance());
    }

    #[test]
    fn gram_and_covariance_routes_agree() {
        // N > dM uses the covariance route; compare with a Gram solve by hand.
        let ens = random_ensemble(12, 3, 2);
        let sub = fit_pca(&ens, ModeRule::Fixed(9)).unwrap();
        let x = ens.data_matrix();
        let mut xc = x.clone();
        let mean = x.row_mean();
        for mut r in xc.row_iter_mut() {
            r -= &mean;
        }
        let mut gram_vals: Vec<f64> = SymmetricEigen::new(&xc * xc.transpose() / 11.0)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        gram_vals.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in sub.eigenvalues().iter().zip(&gram_vals) {
            assert!((a - b).abs() < 1e-9 * gram_vals[0]);
        }
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let ens = random_ensemble(6, 5, 3);
        let sub = fit_pca(&ens, ModeRule::Fixed(4)).unwrap();
        for c in sub.modes().column_iter() {
            let big = c
                .iter()
                .copied()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn project_and_reconstruct_identities() {
        let ens = random_ensemble(6, 5, 4);
        let sub = fit_pca(&ens, ModeRule::Fixed(3)).unwrap();
        assert!(sub.project(sub.mean()).unwrap().0.amax() < 1e-12);
        let x = sub.mean() + sub.modes().column(0) * 3.0;
        let a = sub.project(&x).unwrap();
        assert!((a.0[0] - 3.0).abs() < 1e-12 && a.0[1].abs() < 1e-12 && a.0[2].abs() < 1e-12);
        assert!((sub.reconstruct(&a).unwrap() - &x).amax() < 1e-10);
        let ones = ShapeCoefficients(DVector::from_vec(vec![1.0, 1.0, 0.0]));
        let expect = sub.mean() + sub.modes().column(0) + sub.modes().column(1);
        assert!((sub.reconstruct(&ones).unwrap() - expect).amax() < 1e-12);
        assert_eq!(sub.reconstruct(&ShapeCoefficients::zeros(3)).unwrap(), *sub.mean());
        assert!(sub.project(&DVector::zeros(4)).is_err());
        assert!(sub.reconstruct(&ShapeCoefficients::zeros(2)).is_err());
    }

    #[test]
    fn projection_is_optimal() {
        let ens = random_ensemble(7, 6, 5);
        let sub = fit_pca(&ens, ModeRule::Fixed(4)).unwrap();
        let mut rng = rng_from_seed(6);
        let x = DVector::from_fn(sub.mean().len(), |_, _| rng.random_range(-4.0..4.0));
        let best = (&x - sub.reconstruct(&sub.project(&x).unwrap()).unwrap()).norm_squared();
        for _ in 0..100 {
            let b = ShapeCoefficients(DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0)));
            let other = (&x - sub.reconstruct(&b).unwrap()).norm_squared();
            assert!(best <= other);
        }
    }

    #[test]
    fn mode_sampling() {
        let ens = random_ensemble(6, 4, 7);
        let sub = fit_pca(&ens, ModeRule::Fixed(3)).unwrap();
        assert_eq!(sub.sample_mode(2, 0.0).unwrap(), *sub.mean());
        let plus = sub.sample_mode(1, 3.0).unwrap();
        let minus = sub.sample_mode(1, -3.0).unwrap();
        assert!(((plus + minus) / 2.0 - sub.mean()).amax() < 1e-12);
        let one = sub.sample_mode(2, 1.0).unwrap();
        assert!(((one - sub.mean()).norm() - sub.eigenvalues()[1].sqrt()).abs() < 1e-10);
        assert!(sub.sample_mode(0, 1.0).is_err());
        assert!(sub.sample_mode(4, 1.0).is_err());
    }

    #[test]
    fn random_sampling_variance_and_determinism() {
        let ens = random_ensemble(6, 4, 8);
        let sub = fit_pca(&ens, ModeRule::Fixed(3)).unwrap();
        let mut rng = rng_from_seed(11);
        let u1 = sub.modes().column(0).into_owned();
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s = sub.sample_random(3, &mut rng).unwrap();
            acc += (s - sub.mean()).dot(&u1).powi(2);
        }
        let var = acc / draws as f64;
        assert!((var / sub.eigenvalues()[0] - 1.0).abs() < 0.1);
        let a = sub.sample_random(2, &mut rng_from_seed(3)).unwrap();
        let b = sub.sample_random(2, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        assert!(sub.sample_random(4, &mut rng).is_err());
    }

    #[test]
    fn identical_shapes_have_zero_spectrum() {
        let s = PointSet::from_points3(&[[0.1, 0.2, 0.3], [1.7, 2.9, -0.3]]).unwrap();
        let ens = CorrespondenceEnsemble::new(vec![s.clone(), s.clone(), s]).unwrap();
        let sub = fit_pca(&ens, ModeRule::VarianceFraction(0.97)).unwrap();
        assert_eq!(sub.n_modes(), 0);
        assert!(sub.spectrum().iter().all(|&l| l == 0.0));
        let mut rng = rng_from_seed(1);
        assert_eq!(sub.sample_random(0, &mut rng).unwrap(), *sub.mean());
    }

    #[test]
    fn reconstruction_error_shrinks_with_more_modes() {
        let ens = random_ensemble(9, 5, 12);
        let sub = fit_pca(&ens, ModeRule::Fixed(8)).unwrap();
        let mut rng = rng_from_seed(13);
        for _ in 0..10 {
            let x = DVector::from_fn(sub.mean().len(), |_, _| rng.random_range(-4.0..4.0));
            let mut prev = f64::INFINITY;
            for k in 0..=8 {
                let t = sub.truncated(k).unwrap();
                let err = (&x - t.reconstruct(&t.project(&x).unwrap()).unwrap()).norm();
                assert!(err <= prev + 1e-12);
                prev = err;
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let ens = random_ensemble(5, 4, 14);
        let sub = fit_pca(&ens, ModeRule::Fixed(3)).unwrap();
        let back = PcaSubspace::from_text(&sub.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, sub);
    }
}
