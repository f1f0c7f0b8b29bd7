//! Lesion screening by nonorthogonal projection onto a controls subspace.
//!
//! The sample x̃ is explained as x(α) + Δx∘η(x(α)): a subspace member plus
//! a signed offset Δx_i along the outward normal η_i at every
//! correspondence. Offsets carry a smooth L1 penalty so they stay sparse and
//! mark the lesion support. Coefficients and offsets are updated by
//! alternating gradient steps that are accepted only when they lower the
//! energy.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::shape_data::{
    flatten, rigid_align, sdt_normal, unflatten, CorrespondenceEnsemble, ScalarVolume, ShapeVector, SimilarityTransform,
};
use crate::shape_space::{PcaSubspace, ShapeCoefficients};

pub const DEFAULT_BETA: f64 = 1e6;
pub const DEFAULT_THRESHOLD: f64 = 0.005;
const FD_GUARD: f64 = 1e-12;

/// Outward unit normals of the sample's surface, evaluated anywhere near it.
pub trait NormalField: Sync {
    fn normal(&self, p: [f64; 3]) -> Result<[f64; 3]>;
}

impl NormalField for ScalarVolume {
    fn normal(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        sdt_normal(self, p)
    }
}

/// Normal field backed by a closure, e.g. an analytic SDT gradient.
pub struct FnNormalField<F>(pub F);

impl<F> NormalField for FnNormalField<F>
where
    F: Fn([f64; 3]) -> Result<[f64; 3]> + Sync,
{
    fn normal(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        (self.0)(p)
    }
}

/// A field seen through a similarity transform `t`: normals at `p` are those
/// of the original field at t⁻¹(p), rotated by t.
struct TransformedField<'a, N: NormalField + ?Sized> {
    inner: &'a N,
    t: &'a SimilarityTransform,
}

impl<N: NormalField + ?Sized> NormalField for TransformedField<'_, N> {
    fn normal(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let r = &self.t.rotation;
        let d = [
            p[0] - self.t.translation[0],
            p[1] - self.t.translation[1],
            p[2] - self.t.translation[2],
        ];
        let mut q = [0.0; 3];
        for (a, qa) in q.iter_mut().enumerate() {
            *qa = (r[(0, a)] * d[0] + r[(1, a)] * d[1] + r[(2, a)] * d[2]) / self.t.scale;
        }
        let n = self.inner.normal(q)?;
        let mut out = [0.0; 3];
        for (a, o) in out.iter_mut().enumerate() {
            *o = r[(a, 0)] * n[0] + r[(a, 1)] * n[1] + r[(a, 2)] * n[2];
        }
        Ok(out)
    }
}

/// How the L1 weight λ is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaRule {
    Fixed(f64),
    /// λ = factor × median initial per-point data-gradient magnitude
    /// |2 r_iᵀη_i|, so the saturated penalty gradient equals that fraction.
    Auto {
        factor: f64,
    },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Auto { factor: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningConfig {
    pub lambda: LambdaRule,
    pub beta: f64,
    pub initial_offset: f64,
    pub convergence_tol: f64,
    pub max_iters: usize,
    /// ω₀; `None` uses 1e-2·√λ₁.
    pub initial_alpha_rate: Option<f64>,
    /// γ_i₀; `None` uses 1e-2 × mean nearest-neighbour spacing of the mean.
    pub initial_offset_rate: Option<f64>,
    pub rate_growth: f64,
    pub rate_backoff: f64,
    /// Consecutive rejected coefficient steps treated as divergence.
    pub max_rejections: usize,
    /// Rigidly align the sample to the controls mean before screening.
    pub align: bool,
    /// Keep offsets fixed at `initial_offset` (plain projection).
    pub freeze_offsets: bool,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaRule::default(),
            beta: DEFAULT_BETA,
            initial_offset: 1e-6,
            convergence_tol: 1e-6,
            max_iters: 10_000,
            initial_alpha_rate: None,
            initial_offset_rate: None,
            rate_growth: 1.1,
            rate_backoff: 2.0,
            max_rejections: 100,
            align: true,
            freeze_offsets: false,
        }
    }
}

impl ScreeningConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be >= 1, got {}", self.beta)));
        }
        match self.lambda {
            LambdaRule::Fixed(l) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::invalid(format!("lambda must be >= 0, got {l}")));
            }
            LambdaRule::Auto { factor } if !pos(factor) => {
                return Err(Error::invalid(format!("lambda factor must be > 0, got {factor}")));
            }
            _ => {}
        }
        if !self.initial_offset.is_finite() {
            return Err(Error::invalid("initial offset must be finite"));
        }
        if !pos(self.convergence_tol) || self.max_iters == 0 || self.max_rejections == 0 {
            return Err(Error::invalid(
                "tolerance, max_iters and max_rejections must be positive",
            ));
        }
        if self.initial_alpha_rate.is_some_and(|r| !pos(r)) || self.initial_offset_rate.is_some_and(|r| !pos(r)) {
            return Err(Error::invalid("initial rates must be positive"));
        }
        if !(self.rate_growth >= 1.0 && self.rate_backoff > 1.0) {
            return Err(Error::invalid("rate_growth must be >= 1 and rate_backoff > 1"));
        }
        Ok(())
    }
}

/// Current iterate of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningState {
    pub alpha: ShapeCoefficients,
    pub offsets: Vec<f64>,
    /// η(x_i(α)) at the current reconstruction.
    pub normals: Vec<[f64; 3]>,
    pub prev_alpha: Option<ShapeCoefficients>,
    pub prev_normals: Option<Vec<[f64; 3]>>,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningResult {
    pub alpha: ShapeCoefficients,
    pub offsets: Vec<f64>,
    pub normals: Vec<[f64; 3]>,
    /// x(α) in the frame the sample was screened in.
    pub reconstruction: ShapeVector,
    /// Energy after initialization followed by one entry per iteration.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda: f64,
    /// Transform applied to the sample before screening (identity when
    /// alignment is off).
    pub alignment: SimilarityTransform,
}

impl ScreeningResult {
    /// x(α) + Δx∘η, the reconstructed sample including its offsets.
    pub fn offset_surface(&self) -> ShapeVector {
        let mut out = self.reconstruction.clone();
        for (i, (d, n)) in self.offsets.iter().zip(&self.normals).enumerate() {
            for a in 0..3 {
                out[3 * i + a] += d * n[a];
            }
        }
        out
    }

    pub fn max_abs_offset(&self) -> f64 {
        self.offsets.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    pub fn offsets_csv(&self) -> String {
        let mut out = String::from("point,offset_mm\n");
        for (i, d) in self.offsets.iter().enumerate() {
            let _ = writeln!(out, "{i},{d}");
        }
        out
    }

    pub fn energy_trace_csv(&self) -> String {
        let mut out = String::from("iteration,energy\n");
        for (i, e) in self.energy_trace.iter().enumerate() {
            let _ = writeln!(out, "{i},{e}");
        }
        out
    }
}

/// Smooth L1 surrogate (1/β)[log(1+e^{−βy}) + log(1+e^{βy})], evaluated as
/// |y| + (2/β)·log(1+e^{−β|y|}).
pub fn smooth_l1(y: f64, beta: f64) -> f64 {
    let a = y.abs();
    a + 2.0 / beta * (-beta * a).exp().ln_1p()
}

/// d smooth_l1 / dy = tanh(βy/2).
pub fn grad_smooth_l1(y: f64, beta: f64) -> f64 {
    (0.5 * beta * y).tanh()
}

fn check_state(sample: &ShapeVector, state: &ScreeningState, sub: &PcaSubspace) -> Result<usize> {
    if sub.dim() != 3 {
        return Err(Error::invalid("screening needs a 3-d subspace"));
    }
    if sample.len() != sub.mean().len() {
        return Err(Error::DimensionMismatch {
            expected: sub.mean().len(),
            got: sample.len(),
        });
    }
    let m = sub.n_points();
    if state.offsets.len() != m || state.normals.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: state.offsets.len(),
        });
    }
    if state.alpha.len() != sub.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: sub.n_modes(),
            got: state.alpha.len(),
        });
    }
    Ok(m)
}

/// r = x̃ − x(α) − Δx∘η.
fn residual(sample: &ShapeVector, recon: &ShapeVector, offsets: &[f64], normals: &[[f64; 3]]) -> ShapeVector {
    let mut r = sample - recon;
    for (i, (d, n)) in offsets.iter().zip(normals).enumerate() {
        for a in 0..3 {
            r[3 * i + a] -= d * n[a];
        }
    }
    r
}

fn point_energy(r: &ShapeVector, i: usize, offset: f64, lambda: f64, beta: f64) -> f64 {
    let ri = r.fixed_rows::<3>(3 * i);
    ri.norm_squared() + lambda * smooth_l1(offset, beta)
}

fn energy_parts(
    sample: &ShapeVector,
    recon: &ShapeVector,
    offsets: &[f64],
    normals: &[[f64; 3]],
    lambda: f64,
    beta: f64,
) -> f64 {
    let r = residual(sample, recon, offsets, normals);
    (0..offsets.len())
        .map(|i| point_energy(&r, i, offsets[i], lambda, beta))
        .sum()
}

/// E = Σ_i ‖x̃_i − x_i(α) − Δx_i η_i‖² + λ Σ_i smooth_l1(Δx_i), using the
/// normals stored in `state`.
pub fn energy(sample: &ShapeVector, state: &ScreeningState, sub: &PcaSubspace, lambda: f64, beta: f64) -> Result<f64> {
    check_state(sample, state, sub)?;
    let recon = sub.reconstruct(&state.alpha)?;
    Ok(energy_parts(
        sample,
        &recon,
        &state.offsets,
        &state.normals,
        lambda,
        beta,
    ))
}

/// Finite-difference normal Jacobian: column k = Δx∘(η^t − η^{t−1}) /
/// (α_k^t − α_k^{t−1}); columns with |Δα_k| below the guard are zero. `None`
/// without history.
fn normal_jacobian(state: &ScreeningState, m: usize) -> Option<DMatrix<f64>> {
    let (pa, pn) = (state.prev_alpha.as_ref()?, state.prev_normals.as_ref()?);
    let k = state.alpha.len();
    let mut num = DVector::zeros(3 * m);
    for i in 0..m {
        for a in 0..3 {
            num[3 * i + a] = state.offsets[i] * (state.normals[i][a] - pn[i][a]);
        }
    }
    let mut j = DMatrix::zeros(3 * m, k);
    for c in 0..k {
        let da = state.alpha.0[c] - pa.0[c];
        if da.abs() >= FD_GUARD {
            j.column_mut(c).copy_from(&(&num / da));
        }
    }
    Some(j)
}

/// ∂E/∂α = −2 (U + J)ᵀ r with offsets held fixed; J is the finite-difference
/// normal Jacobian (zero on the first iteration).
pub fn grad_alpha(sample: &ShapeVector, state: &ScreeningState, sub: &PcaSubspace) -> Result<DVector<f64>> {
    let m = check_state(sample, state, sub)?;
    let recon = sub.reconstruct(&state.alpha)?;
    let r = residual(sample, &recon, &state.offsets, &state.normals);
    let mut g = sub.modes().tr_mul(&r);
    if let Some(j) = normal_jacobian(state, m) {
        g += j.tr_mul(&r);
    }
    Ok(g * -2.0)
}

/// ∂E/∂Δx_i = −2 r_iᵀη_i + λ·tanh(βΔx_i/2).
pub fn grad_offsets(
    sample: &ShapeVector,
    state: &ScreeningState,
    sub: &PcaSubspace,
    lambda: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    check_state(sample, state, sub)?;
    let recon = sub.reconstruct(&state.alpha)?;
    let r = residual(sample, &recon, &state.offsets, &state.normals);
    Ok(data_grad_offsets(&r, &state.normals)
        .into_iter()
        .zip(&state.offsets)
        .map(|(g, d)| g + lambda * grad_smooth_l1(*d, beta))
        .collect())
}

fn data_grad_offsets(r: &ShapeVector, normals: &[[f64; 3]]) -> Vec<f64> {
    normals
        .iter()
        .enumerate()
        .map(|(i, n)| -2.0 * (r[3 * i] * n[0] + r[3 * i + 1] * n[1] + r[3 * i + 2] * n[2]))
        .collect()
}

/// Normals of `field` at every point of `x`; failures name the point.
pub fn normals_at<N: NormalField + ?Sized>(field: &N, x: &ShapeVector) -> Result<Vec<[f64; 3]>> {
    (0..x.len() / 3)
        .map(|i| {
            let p = [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
            field.normal(p).map_err(|e| match e {
                Error::OutOfBounds { point, .. } => Error::OutOfBounds { index: i, point },
                Error::DegenerateNormal(_) => Error::Numerical(format!("degenerate normal at point {i} {p:?}")),
                e => e,
            })
        })
        .collect()
}

/// Mean distance from each point of `x` to its nearest neighbour.
pub fn mean_spacing(x: &ShapeVector) -> f64 {
    let m = x.len() / 3;
    if m < 2 {
        return 1.0;
    }
    let total: f64 = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j != i)
                .map(|j| (x.fixed_rows::<3>(3 * i) - x.fixed_rows::<3>(3 * j)).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / m as f64
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let base: f64 = old.iter().map(|a| a * a).sum::<f64>().sqrt();
    // absolute below 1 mm so vanishing offsets can still converge
    diff / base.max(1.0)
}

/// Algorithm: orthogonal projection to start, then alternating accepted-only
/// descent on α and on the per-point offsets until both relative changes
/// fall below the tolerance.
pub fn screen<N: NormalField + ?Sized>(
    sample: &ShapeVector,
    field: &N,
    sub: &PcaSubspace,
    cfg: &ScreeningConfig,
) -> Result<ScreeningResult> {
    cfg.validate()?;
    if sub.dim() != 3 {
        return Err(Error::invalid("screening needs a 3-d subspace"));
    }
    if sample.len() != sub.mean().len() {
        return Err(Error::DimensionMismatch {
            expected: sub.mean().len(),
            got: sample.len(),
        });
    }
    if sub.n_modes() == 0 {
        return Err(Error::invalid("screening needs at least one mode"));
    }
    let m = sub.n_points();
    let alignment = if cfg.align {
        let s = unflatten(sample, 3)?;
        rigid_align(&s, &unflatten(sub.mean(), 3)?, false)?
    } else {
        SimilarityTransform::identity(3)
    };
    let sample = if cfg.align {
        flatten(&alignment.apply(&unflatten(sample, 3)?))
    } else {
        sample.clone()
    };
    let aligned_field = TransformedField {
        inner: field,
        t: &alignment,
    };
    let field: &dyn NormalField = if cfg.align { &aligned_field } else { &FieldRef(field) };

    let alpha0 = sub.project(&sample)?;
    let mut recon = sub.reconstruct(&alpha0)?;
    let mut state = ScreeningState {
        alpha: alpha0,
        offsets: vec![cfg.initial_offset; m],
        normals: normals_at(field, &recon)?,
        prev_alpha: None,
        prev_normals: None,
        energy: 0.0,
    };
    let lambda = match cfg.lambda {
        LambdaRule::Fixed(l) => l,
        LambdaRule::Auto { factor } => {
            let r = residual(&sample, &recon, &state.offsets, &state.normals);
            let mut g: Vec<f64> = data_grad_offsets(&r, &state.normals).iter().map(|g| g.abs()).collect();
            factor * median(&mut g)
        }
    };
    let beta = cfg.beta;
    state.energy = energy_parts(&sample, &recon, &state.offsets, &state.normals, lambda, beta);
    let mut trace = vec![state.energy];

    let mut omega = cfg
        .initial_alpha_rate
        .unwrap_or_else(|| 1e-2 * sub.eigenvalues()[0].sqrt().max(1e-12));
    let gamma0 = cfg
        .initial_offset_rate
        .unwrap_or_else(|| 1e-2 * mean_spacing(sub.mean()));
    let mut gamma = vec![gamma0; m];
    let mut rejections = 0usize;
    let mut converged = false;
    let mut diverged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let old_alpha = state.alpha.0.clone();
        let old_offsets = state.offsets.clone();

        // coefficient step
        let g = grad_alpha(&sample, &state, sub)?;
        loop {
            let cand = ShapeCoefficients(&state.alpha.0 - &g * omega);
            if cand.0 == state.alpha.0 {
                break;
            }
            let cand_recon = sub.reconstruct(&cand)?;
            let accepted = match normals_at(field, &cand_recon) {
                Ok(cand_normals) => {
                    let e = energy_parts(&sample, &cand_recon, &state.offsets, &cand_normals, lambda, beta);
                    if e < state.energy {
                        state.prev_alpha = Some(std::mem::replace(&mut state.alpha, cand));
                        state.prev_normals = Some(std::mem::replace(&mut state.normals, cand_normals));
                        state.energy = e;
                        recon = cand_recon;
                        true
                    } else {
                        false
                    }
                }
                // a step that leaves the volume counts as a rejection
                Err(Error::OutOfBounds { .. }) | Err(Error::Numerical(_)) => false,
                Err(e) => return Err(e),
            };
            if accepted {
                omega *= cfg.rate_growth;
                rejections = 0;
                break;
            }
            omega /= cfg.rate_backoff;
            rejections += 1;
            if rejections >= cfg.max_rejections {
                diverged = true;
                break;
            }
        }
        if diverged {
            trace.push(state.energy);
            break;
        }

        // offset step; the energy is separable per point once normals are fixed
        if !cfg.freeze_offsets {
            let r = residual(&sample, &recon, &state.offsets, &state.normals);
            let dg = data_grad_offsets(&r, &state.normals);
            for i in 0..m {
                let d = state.offsets[i];
                let gi = dg[i] + lambda * grad_smooth_l1(d, beta);
                let ri = r.fixed_rows::<3>(3 * i).into_owned();
                let n = state.normals[i];
                let e_point = |x: f64| {
                    let shift = nalgebra::Vector3::new(n[0], n[1], n[2]) * (x - d);
                    (ri - shift).norm_squared() + lambda * smooth_l1(x, beta)
                };
                let e0 = e_point(d);
                loop {
                    let cand = d - gamma[i] * gi;
                    if cand == d {
                        break;
                    }
                    if e_point(cand) < e0 {
                        state.offsets[i] = cand;
                        gamma[i] *= cfg.rate_growth;
                        break;
                    }
                    gamma[i] /= cfg.rate_backoff;
                }
            }
            let e = energy_parts(&sample, &recon, &state.offsets, &state.normals, lambda, beta);
            // per-point decreases imply a lower sum; guard against rounding
            if e <= state.energy {
                state.energy = e;
            } else {
                state.offsets = old_offsets.clone();
            }
        }
        trace.push(state.energy);

        let da = rel_change(state.alpha.0.as_slice(), old_alpha.as_slice());
        let dx = rel_change(&state.offsets, &old_offsets);
        if da < cfg.convergence_tol && dx < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(ScreeningResult {
        alpha: state.alpha,
        offsets: state.offsets,
        normals: state.normals,
        reconstruction: recon,
        energy_trace: trace,
        iterations,
        converged: converged && !diverged,
        lambda,
        alignment,
    })
}

struct FieldRef<'a, N: ?Sized>(&'a N);

impl<N: NormalField + ?Sized> NormalField for FieldRef<'_, N> {
    fn normal(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        self.0.normal(p)
    }
}

/// Zeroes offsets with |Δx_i| ≤ `half_width`.
pub fn threshold_offsets(offsets: &[f64], half_width: f64) -> Vec<f64> {
    offsets
        .iter()
        .map(|&d| if d.abs() <= half_width { 0.0 } else { d })
        .collect()
}

/// Per-correspondence mean difference between two groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDifference {
    pub dim: usize,
    /// mean_a − mean_b, flattened.
    pub displacement: ShapeVector,
    pub magnitudes: Vec<f64>,
}

impl GroupDifference {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(if self.dim == 3 {
            "point,dx,dy,dz,magnitude\n"
        } else {
            "point,dx,dy,magnitude\n"
        });
        for (i, mag) in self.magnitudes.iter().enumerate() {
            let _ = write!(out, "{i}");
            for a in 0..self.dim {
                let _ = write!(out, ",{}", self.displacement[self.dim * i + a]);
            }
            let _ = writeln!(out, ",{mag}");
        }
        out
    }
}

pub fn group_difference(a: &CorrespondenceEnsemble, b: &CorrespondenceEnsemble) -> Result<GroupDifference> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.n_points() != b.n_points() {
        return Err(Error::DimensionMismatch {
            expected: a.n_points(),
            got: b.n_points(),
        });
    }
    let d = a.dim();
    let displacement = flatten(&a.mean_shape()) - flatten(&b.mean_shape());
    let magnitudes = (0..a.n_points()).map(|i| displacement.rows(d * i, d).norm()).collect();
    Ok(GroupDifference {
        dim: d,
        displacement,
        magnitudes,
    })
}

/// Shared histogram binning for offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBins {
    pub edges: Vec<f64>,
}

impl HistogramBins {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 {
            return Err(Error::invalid("histogram needs hi > lo and at least one bin"));
        }
        let w = (hi - lo) / bins as f64;
        Ok(Self {
            edges: (0..=bins).map(|i| lo + w * i as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fraction of values per bin; values outside the range are clamped into
    /// the end bins.
    pub fn histogram(&self, values: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut counts = vec![0.0; n];
        for &v in values {
            let idx = self.edges[1..n].partition_point(|&e| e <= v);
            counts[idx] += 1.0;
        }
        if !values.is_empty() {
            counts.iter_mut().for_each(|c| *c /= values.len() as f64);
        }
        counts
    }
}

/// Pointwise quantile curves across samples and the median ± 1.5·IQR band.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurves {
    pub quantiles: Vec<f64>,
    /// curves[q][bin]
    pub curves: Vec<Vec<f64>>,
    pub envelope_lower: Vec<f64>,
    pub envelope_upper: Vec<f64>,
}

impl QuantileCurves {
    pub fn envelope_width(&self) -> Vec<f64> {
        self.envelope_upper
            .iter()
            .zip(&self.envelope_lower)
            .map(|(u, l)| u - l)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin");
        for q in &self.quantiles {
            let _ = write!(out, ",q{q}");
        }
        out.push_str(",envelope_lower,envelope_upper\n");
        for b in 0..self.envelope_lower.len() {
            let _ = write!(out, "{b}");
            for c in &self.curves {
                let _ = write!(out, ",{}", c[b]);
            }
            let _ = writeln!(out, ",{},{}", self.envelope_lower[b], self.envelope_upper[b]);
        }
        out
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn offset_quantile_curves(histograms: &[Vec<f64>], quantiles: &[f64]) -> Result<QuantileCurves> {
    let Some(first) = histograms.first() else {
        return Err(Error::invalid("no histograms"));
    };
    let bins = first.len();
    if histograms.iter().any(|h| h.len() != bins) {
        return Err(Error::invalid("histograms must share binning"));
    }
    if quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::invalid("quantiles must lie in [0, 1]"));
    }
    let columns: Vec<Vec<f64>> = (0..bins)
        .map(|b| {
            let mut col: Vec<f64> = histograms.iter().map(|h| h[b]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    let curves = quantiles
        .iter()
        .map(|&q| columns.iter().map(|c| quantile_sorted(c, q)).collect())
        .collect();
    let mut lower = Vec::with_capacity(bins);
    let mut upper = Vec::with_capacity(bins);
    for c in &columns {
        let med = quantile_sorted(c, 0.5);
        let iqr = quantile_sorted(c, 0.75) - quantile_sorted(c, 0.25);
        lower.push(med - 1.5 * iqr);
        upper.push(med + 1.5 * iqr);
    }
    Ok(QuantileCurves {
        quantiles: quantiles.to_vec(),
        curves,
        envelope_lower: lower,
        envelope_upper: upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::shape_data::PointSet;
    use crate::shape_space::{fit_pca, ModeRule};
    use rand::Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn smooth_l1_values() {
        assert!((smooth_l1(0.0, 1e6) - 2.0 * LN2 / 1e6).abs() < 1e-18);
        assert!((smooth_l1(1.0, 1e6) - 1.0).abs() < 1e-12);
        for y in [1e-7, 3e-6, 0.2, 5.0] {
            assert_eq!(smooth_l1(-y, 1e6), smooth_l1(y, 1e6));
        }
        // direct evaluation of the two-softplus form at moderate βy
        let (y, b) = (0.3, 10.0);
        let direct = ((1.0 + (-b * y as f64).exp()).ln() + (1.0 + (b * y).exp()).ln()) / b;
        assert!((smooth_l1(y, b) - direct).abs() < 1e-14);
    }

    #[test]
    fn smooth_l1_gradient() {
        assert_eq!(grad_smooth_l1(0.0, 1e6), 0.0);
        assert!((grad_smooth_l1(1e-5, 1e6) - 5f64.tanh()).abs() < 1e-15);
        // the two-sigmoid form
        let (y, b) = (0.37, 4.0);
        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        assert!((grad_smooth_l1(y, b) - (sig(b * y) - sig(-b * y))).abs() < 1e-15);
        for y in [1e-7, -1e-7, 1e-5, -1e-5, 1.0, -1.0] {
            let h = 1e-9;
            let fd = (smooth_l1(y + h, 1e6) - smooth_l1(y - h, 1e6)) / (2.0 * h);
            assert!((fd - grad_smooth_l1(y, 1e6)).abs() < 1e-6, "y={y}: {fd}");
        }
    }

    #[test]
    fn surrogate_gap_bound() {
        let mut rng = rng_from_seed(1);
        for _ in 0..10_000 {
            let y: f64 = rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-9..2));
            let gap = smooth_l1(y, 1e6) - y.abs();
            assert!(gap > 0.0 || y.abs() > 3e-5, "y={y}");
            assert!(gap <= 2.0 * LN2 / 1e6);
        }
    }

    #[test]
    fn thresholding() {
        assert_eq!(
            threshold_offsets(&[0.004, -0.006, 0.02], 0.005),
            vec![0.0, -0.006, 0.02]
        );
        assert_eq!(threshold_offsets(&[0.004, -0.006], 0.0), vec![0.004, -0.006]);
        assert_eq!(threshold_offsets(&[0.001, -0.002], 0.005), vec![0.0, 0.0]);
    }

    /// Sphere-like toy model: points on a unit-ish sphere of radius 10, one
    /// mode scaling the sphere radially.
    fn sphere_model() -> (PcaSubspace, Vec<[f64; 3]>) {
        let dirs: Vec<[f64; 3]> = (0..12)
            .map(|i| {
                let t = 0.5 + i as f64;
                let z = 1.0 - 2.0 * t / 12.0;
                let r = (1.0 - z * z).sqrt();
                let ph = 2.4 * i as f64;
                [r * ph.cos(), r * ph.sin(), z]
            })
            .collect();
        let shapes: Vec<PointSet> = [9.0, 9.5, 10.0, 10.5, 11.0]
            .iter()
            .map(|&rad| {
                PointSet::from_points3(
                    &dirs
                        .iter()
                        .map(|d| [rad * d[0], rad * d[1], rad * d[2]])
                        .collect::<Vec<_>>(),
                )
                .unwrap()
            })
            .collect();
        let ens = CorrespondenceEnsemble::new(shapes).unwrap();
        (fit_pca(&ens, ModeRule::Fixed(1)).unwrap(), dirs)
    }

    fn radial() -> FnNormalField<impl Fn([f64; 3]) -> Result<[f64; 3]> + Sync> {
        FnNormalField(|p: [f64; 3]| {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            Ok([p[0] / n, p[1] / n, p[2] / n])
        })
    }

    fn state_for(sub: &PcaSubspace, alpha: f64, offsets: Vec<f64>) -> ScreeningState {
        let a = ShapeCoefficients(DVector::from_vec(vec![alpha]));
        let recon = sub.reconstruct(&a).unwrap();
        ScreeningState {
            normals: normals_at(&radial(), &recon).unwrap(),
            alpha: a,
            offsets,
            prev_alpha: None,
            prev_normals: None,
            energy: 0.0,
        }
    }

    #[test]
    fn energy_special_cases() {
        let (sub, _) = sphere_model();
        let m = sub.n_points();
        let st = state_for(&sub, 0.0, vec![0.0; m]);
        let e = energy(sub.mean(), &st, &sub, 0.7, 1e6).unwrap();
        assert!((e - 0.7 * m as f64 * 2.0 * LN2 / 1e6).abs() < 1e-15);
        let x = sub.mean().map(|v| v * 1.01 + 0.1);
        let e0 = energy(&x, &st, &sub, 0.0, 1e6).unwrap();
        let direct = (&x - sub.mean()).norm_squared();
        // equal up to summation order
        assert!((e0 - direct).abs() <= 1e-14 * direct);
        // x̃ = x(α) + c·η, Δx = c
        let c = 0.8;
        let st = state_for(&sub, 0.4, vec![c; m]);
        let recon = sub.reconstruct(&st.alpha).unwrap();
        let mut xt = recon.clone();
        for (i, n) in st.normals.iter().enumerate() {
            for a in 0..3 {
                xt[3 * i + a] += c * n[a];
            }
        }
        let e = energy(&xt, &st, &sub, 0.3, 1e6).unwrap();
        assert!((e - 0.3 * m as f64 * smooth_l1(c, 1e6)).abs() < 1e-12);
    }

    #[test]
    fn gradient_special_cases() {
        let (sub, _) = sphere_model();
        let m = sub.n_points();
        let x = sub.mean().map(|v| v * 1.02);
        let st = state_for(&sub, 0.3, vec![0.0; m]);
        let g = grad_alpha(&x, &st, &sub).unwrap();
        let recon = sub.reconstruct(&st.alpha).unwrap();
        let expect = sub.modes().tr_mul(&(&x - recon)) * -2.0;
        assert_eq!(g, expect);
        let proj = sub.project(&x).unwrap().0[0];
        let st = state_for(&sub, proj, vec![0.0; m]);
        assert!(grad_alpha(&x, &st, &sub).unwrap().amax() < 1e-10);

        let st = state_for(&sub, 0.0, vec![0.0; m]);
        let go = grad_offsets(sub.mean(), &st, &sub, 0.0, 1e6).unwrap();
        assert!(go.iter().all(|g| g.abs() < 1e-14));
        let mut xt = sub.mean().clone();
        let n0 = st.normals[0];
        for a in 0..3 {
            xt[a] += 2.0 * n0[a];
        }
        let go = grad_offsets(&xt, &st, &sub, 0.0, 1e6).unwrap();
        assert!((go[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (sub, _) = sphere_model();
        let m = sub.n_points();
        let mut rng = rng_from_seed(3);
        let x: ShapeVector = sub.mean().map(|v| v * 1.05 + rng.random_range(-0.3..0.3));
        let offsets: Vec<f64> = (0..m)
            .map(|_| rng.random_range(0.05..0.5) * if rng.random() { 1.0 } else { -1.0 })
            .collect();
        let st = state_for(&sub, 0.7, offsets);
        let (lambda, beta) = (0.4, 1e6);
        let go = grad_offsets(&x, &st, &sub, lambda, beta).unwrap();
        let h = 1e-6;
        for i in 0..m {
            let mut p = st.clone();
            p.offsets[i] += h;
            let mut q = st.clone();
            q.offsets[i] -= h;
            let fd =
                (energy(&x, &p, &sub, lambda, beta).unwrap() - energy(&x, &q, &sub, lambda, beta).unwrap()) / (2.0 * h);
            assert!(
                (fd - go[i]).abs() <= 1e-5 * go[i].abs().max(1.0),
                "{i}: {fd} vs {}",
                go[i]
            );
        }
        // frozen normals: perturb α without recomputing η
        let ga = grad_alpha(&x, &st, &sub).unwrap();
        let mut p = st.clone();
        p.alpha.0[0] += 1e-5;
        let mut q = st.clone();
        q.alpha.0[0] -= 1e-5;
        let fd = (energy(&x, &p, &sub, lambda, beta).unwrap() - energy(&x, &q, &sub, lambda, beta).unwrap()) / 2e-5;
        assert!((fd - ga[0]).abs() <= 1e-4 * ga[0].abs(), "{fd} vs {}", ga[0]);
    }

    #[test]
    fn fd_jacobian_column_is_guarded() {
        let (sub, _) = sphere_model();
        let m = sub.n_points();
        let mut st = state_for(&sub, 0.5, vec![1.0; m]);
        st.prev_alpha = Some(st.alpha.clone());
        st.prev_normals = Some(st.normals.iter().map(|n| [n[0] + 0.1, n[1], n[2]]).collect());
        let j = normal_jacobian(&st, m).unwrap();
        assert!(j.iter().all(|v| *v == 0.0));
        st.prev_alpha = Some(ShapeCoefficients(DVector::from_vec(vec![0.4])));
        let j = normal_jacobian(&st, m).unwrap();
        assert!((j[(0, 0)] - (-0.1 / 0.1)).abs() < 1e-9);
    }

    fn cfg(lambda: f64) -> ScreeningConfig {
        ScreeningConfig {
            lambda: LambdaRule::Fixed(lambda),
            align: false,
            ..Default::default()
        }
    }

    #[test]
    fn subspace_member_has_no_offsets() {
        let (sub, _) = sphere_model();
        let a_star = ShapeCoefficients(DVector::from_vec(vec![0.9]));
        let x = sub.reconstruct(&a_star).unwrap();
        let r = screen(&x, &radial(), &sub, &cfg(0.5)).unwrap();
        assert!(r.converged);
        assert!((r.alpha.0[0] - 0.9).abs() < 1e-3 * 0.9);
        assert!(r.max_abs_offset() < 1e-3);
        assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn localized_growth_gets_positive_offsets() {
        let (sub, _) = sphere_model();
        let a = ShapeCoefficients(DVector::from_vec(vec![-0.5]));
        let base = sub.reconstruct(&a).unwrap();
        let normals = normals_at(&radial(), &base).unwrap();
        for (sign, expect_pos) in [(1.0, true), (-1.0, false)] {
            let mut x = base.clone();
            for a in 0..3 {
                x[3 * 4 + a] += sign * 2.0 * normals[4][a];
            }
            let r = screen(&x, &radial(), &sub, &cfg(0.5)).unwrap();
            let t = threshold_offsets(&r.offsets, DEFAULT_THRESHOLD);
            assert_eq!(t[4] > 0.0, expect_pos, "{:?}", r.offsets);
            assert!(t[4].abs() > 1.0);
            assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn huge_lambda_gives_orthogonal_projection() {
        let (sub, _) = sphere_model();
        let mut x = sub.mean().map(|v| v * 1.03);
        x[0] += 0.5;
        let r = screen(&x, &radial(), &sub, &cfg(1e6 * 100.0)).unwrap();
        assert!(r.max_abs_offset() < 1e-5);
        let proj = sub.project(&x).unwrap().0[0];
        assert!((r.alpha.0[0] - proj).abs() < 1e-3 * proj.abs().max(1e-3));
    }

    #[test]
    fn frozen_zero_offsets_reproduce_projection() {
        let (sub, _) = sphere_model();
        let x = sub.mean().map(|v| v * 0.97 + 0.05);
        let c = ScreeningConfig {
            initial_offset: 0.0,
            freeze_offsets: true,
            ..cfg(0.0)
        };
        let r = screen(&x, &radial(), &sub, &c).unwrap();
        let proj = sub.project(&x).unwrap().0[0];
        assert!((r.alpha.0[0] - proj).abs() < 1e-6);
        assert!(r.converged);
    }

    #[test]
    fn alignment_handles_posed_samples() {
        let (sub, _) = sphere_model();
        let a = ShapeCoefficients(DVector::from_vec(vec![0.6]));
        let x = sub.reconstruct(&a).unwrap();
        let shifted = x.map(|v| v); // same shape, translated
        let mut shifted = shifted;
        for i in 0..shifted.len() / 3 {
            shifted[3 * i] += 3.0;
        }
        let field = FnNormalField(|p: [f64; 3]| {
            let q = [p[0] - 3.0, p[1], p[2]];
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            Ok([q[0] / n, q[1] / n, q[2] / n])
        });
        let c = ScreeningConfig {
            align: true,
            ..cfg(0.5)
        };
        let r = screen(&shifted, &field, &sub, &c).unwrap();
        assert!((r.alpha.0[0] - 0.6).abs() < 1e-3);
        assert!(r.max_abs_offset() < 1e-3);
    }

    #[test]
    fn out_of_volume_points_are_reported() {
        let (sub, _) = sphere_model();
        let vol = ScalarVolume::from_fn([10, 10, 10], [-2.0; 3], [0.5; 3], |p| p[0]).unwrap();
        let err = screen(sub.mean(), &vol, &sub, &cfg(0.1)).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    #[test]
    fn auto_lambda_uses_median_gradient() {
        let (sub, _) = sphere_model();
        let x = sub.mean().map(|v| v * 1.04);
        let c = ScreeningConfig {
            lambda: LambdaRule::Auto { factor: 0.1 },
            max_iters: 1,
            ..cfg(0.0)
        };
        let r = screen(&x, &radial(), &sub, &c).unwrap();
        assert!(r.lambda > 0.0);
    }

    #[test]
    fn group_differences() {
        let shapes: Vec<PointSet> = (0..3)
            .map(|i| PointSet::new(3, vec![i as f64, 0.0, 1.0, 2.0, 3.0, i as f64]).unwrap())
            .collect();
        let a = CorrespondenceEnsemble::new(shapes.clone()).unwrap();
        let zero = group_difference(&a, &a).unwrap();
        assert!(zero.magnitudes.iter().all(|&m| m == 0.0));
        let b = CorrespondenceEnsemble::new(shapes.iter().map(|s| s.translated(&[0.0, 0.0, 1.0])).collect()).unwrap();
        let d = group_difference(&b, &a).unwrap();
        assert!(d.magnitudes.iter().all(|&m| (m - 1.0).abs() < 1e-12));
        assert!(d.to_csv().starts_with("point,dx,dy,dz,magnitude"));
    }

    #[test]
    fn quantile_curves() {
        let one = offset_quantile_curves(&[vec![0.1, 0.5, 0.4]], &[0.25, 0.5, 0.75]).unwrap();
        for c in &one.curves {
            assert_eq!(c, &vec![0.1, 0.5, 0.4]);
        }
        let two = offset_quantile_curves(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0.5]).unwrap();
        assert_eq!(two.curves[0], vec![0.5, 0.5]);
        assert!(offset_quantile_curves(&[], &[0.5]).is_err());
        let bins = HistogramBins::uniform(-1.0, 1.0, 4).unwrap();
        assert_eq!(bins.histogram(&[-5.0, -0.1, 0.0, 0.9]), vec![0.25, 0.25, 0.25, 0.25]);
    }
}
