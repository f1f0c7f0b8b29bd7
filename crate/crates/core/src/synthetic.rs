//! Box-bump phantoms with analytic correspondences and signed distance
//! fields.
//!
//! A shape is an axis-aligned box centred at the origin with rounded edges,
//! plus smooth Gaussian bumps raised (or dented) along face normals.
//! Correspondences sit on a fixed grid of cell centres on every face, so
//! point k has the same face coordinates on every shape; only the bump
//! displacement along the face normal differs.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::screening::NormalField;
use crate::shape_data::{flatten, CorrespondenceEnsemble, LandmarkCurve, LandmarkSet, PointSet, ScalarVolume};

/// Box face, identified by its outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ];

    /// Normal axis and sign.
    pub fn axis(self) -> (usize, f64) {
        match self {
            Face::PosX => (0, 1.0),
            Face::NegX => (0, -1.0),
            Face::PosY => (1, 1.0),
            Face::NegY => (1, -1.0),
            Face::PosZ => (2, 1.0),
            Face::NegZ => (2, -1.0),
        }
    }

    /// The two in-face axes (u, v), in increasing order.
    pub fn in_face_axes(self) -> (usize, usize) {
        match self.axis().0 {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

/// Gaussian bump in in-face coordinates (mm). Positive height grows the
/// shape outward, negative height dents it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub face: Face,
    pub center: [f64; 2],
    pub sigma: f64,
    pub height: f64,
}

/// Radial profile exp(−t²/2), blended smoothly to zero between 2.5σ and 3σ.
fn profile(t: f64) -> f64 {
    if t >= 3.0 {
        return 0.0;
    }
    let g = (-0.5 * t * t).exp();
    if t <= 2.5 {
        g
    } else {
        g * (1.0 - smootherstep((t - 2.5) / 0.5))
    }
}

fn smootherstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (x * (6.0 * x - 15.0) + 10.0)
}

impl Bump {
    /// Displacement along the face normal at in-face coordinates (u, v).
    pub fn displacement(&self, u: f64, v: f64) -> f64 {
        let rho = ((u - self.center[0]).powi(2) + (v - self.center[1]).powi(2)).sqrt();
        self.height * profile(rho / self.sigma)
    }

    pub fn support_radius(&self) -> f64 {
        3.0 * self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBumpSpec {
    /// Full box extents (mm).
    pub extents: [f64; 3],
    /// Cell counts per axis for face sampling; the face normal to axis a
    /// carries the product of the other two counts.
    pub face_grid: [usize; 3],
    /// Top-face bump: Gaussian width σ (mm), height (mm).
    pub bump_sigma: f64,
    pub bump_height: f64,
    /// Distance (mm) the bump centre travels along x as s goes from 0 to 1.
    pub bump_travel: f64,
    /// Bump centre at s = 0.5, in (x, y).
    pub bump_anchor: [f64; 2],
    pub grid_dims: [usize; 3],
    /// Grid margin beyond the box on every side (mm).
    pub grid_margin: f64,
    pub seed: u64,
}

impl Default for BoxBumpSpec {
    fn default() -> Self {
        Self {
            extents: [40.0, 40.0, 20.0],
            face_grid: [8, 8, 4],
            bump_sigma: 4.5,
            bump_height: 4.0,
            bump_travel: 6.0,
            bump_anchor: [2.5, 2.5],
            grid_dims: [64, 64, 64],
            grid_margin: 10.0,
            seed: 0,
        }
    }
}

impl BoxBumpSpec {
    pub fn half(&self) -> [f64; 3] {
        [self.extents[0] / 2.0, self.extents[1] / 2.0, self.extents[2] / 2.0]
    }

    pub fn n_points(&self) -> usize {
        let [a, b, c] = self.face_grid;
        2 * (a * b + b * c + a * c)
    }

    pub fn spacing(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for (a, sa) in s.iter_mut().enumerate() {
            *sa = (self.extents[a] + 2.0 * self.grid_margin) / (self.grid_dims[a] - 1) as f64;
        }
        s
    }

    pub fn origin(&self) -> [f64; 3] {
        let h = self.half();
        [
            -h[0] - self.grid_margin,
            -h[1] - self.grid_margin,
            -h[2] - self.grid_margin,
        ]
    }

    /// Edge rounding radius: two voxels of the coarsest axis.
    pub fn corner_radius(&self) -> f64 {
        2.0 * self.spacing().iter().cloned().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::invalid("box extents must be positive"));
        }
        if self.face_grid.contains(&0) {
            return Err(Error::invalid("face grid counts must be positive"));
        }
        if self.grid_dims.iter().any(|&n| n < 4) {
            return Err(Error::invalid("SDT grid needs at least 4 nodes per axis"));
        }
        if !(self.grid_margin > 0.0) {
            return Err(Error::invalid("grid margin must be positive"));
        }
        if !(self.bump_sigma > 0.0) || !self.bump_height.is_finite() || !(self.bump_travel >= 0.0) {
            return Err(Error::invalid("bump sigma must be positive, height and travel finite"));
        }
        let half = self.half();
        let rc = self.corner_radius();
        if rc >= half.iter().cloned().fold(f64::INFINITY, f64::min) {
            return Err(Error::invalid(
                "SDT grid too coarse for the box: corner radius exceeds half extent",
            ));
        }
        // correspondences must lie on the flat part of every face
        for a in 0..3 {
            let cell = self.extents[a] / self.face_grid[a] as f64;
            let outer = half[a] - 0.5 * cell;
            if outer > half[a] - rc {
                return Err(Error::invalid(format!(
                    "face samples on axis {a} reach the rounded edges; use fewer cells or a finer grid"
                )));
            }
        }
        for s in [0.0, 1.0] {
            self.top_bump(s).check_within(self)?;
        }
        Ok(())
    }

    /// Top-face bump for latent position s ∈ [0, 1].
    pub fn top_bump(&self, s: f64) -> Bump {
        Bump {
            face: Face::PosZ,
            center: [self.bump_anchor[0] + (s - 0.5) * self.bump_travel, self.bump_anchor[1]],
            sigma: self.bump_sigma,
            height: self.bump_height,
        }
    }
}

impl Bump {
    /// Support must stay inside its face and the bump must not reach past a
    /// quarter of the box along the normal.
    fn check_within(&self, spec: &BoxBumpSpec) -> Result<()> {
        if !(self.sigma > 0.0 && self.height.is_finite()) {
            return Err(Error::invalid("bump sigma must be positive and height finite"));
        }
        let half = spec.half();
        let (u, v) = self.face.in_face_axes();
        let (n, _) = self.face.axis();
        let r = self.support_radius();
        if self.center[0].abs() + r >= half[u] || self.center[1].abs() + r >= half[v] {
            return Err(Error::invalid(format!(
                "bump at {:?} (support radius {r}) extends past its face",
                self.center
            )));
        }
        if self.height.abs() >= half[n] / 2.0 {
            return Err(Error::invalid(format!(
                "bump height {} must stay below a quarter of the box extent {}",
                self.height, spec.extents[n]
            )));
        }
        if spec.grid_margin <= self.height.abs() + 2.0 * spec.corner_radius() {
            return Err(Error::invalid("grid margin too small for the bump height"));
        }
        Ok(())
    }
}

/// One synthetic shape: the box plus its bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxShape {
    half: [f64; 3],
    corner_radius: f64,
    bumps: Vec<Bump>,
}

impl BoxShape {
    pub fn new(spec: &BoxBumpSpec, bumps: Vec<Bump>) -> Result<Self> {
        for b in &bumps {
            b.check_within(spec)?;
        }
        for (i, a) in bumps.iter().enumerate() {
            for b in &bumps[..i] {
                if a.face == b.face {
                    let d = ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2)).sqrt();
                    if d < a.support_radius() + b.support_radius() {
                        return Err(Error::invalid("overlapping bumps on one face"));
                    }
                }
            }
        }
        Ok(Self {
            half: spec.half(),
            corner_radius: spec.corner_radius(),
            bumps,
        })
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    fn rounded_box(&self, p: [f64; 3]) -> f64 {
        let rc = self.corner_radius;
        let q: Vec<f64> = (0..3).map(|a| p[a].abs() - (self.half[a] - rc)).collect();
        let outside = q.iter().map(|x| x.max(0.0).powi(2)).sum::<f64>().sqrt();
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        outside + inside - rc
    }

    /// Implicit surface function: the rounded-box distance minus each bump's
    /// displacement, weighted so it acts only near the bump's own face.
    /// Zero on the surface, negative inside; exact signed distance away from
    /// the bumps.
    pub fn level_set(&self, p: [f64; 3]) -> f64 {
        let mut f = self.rounded_box(p);
        for b in &self.bumps {
            let (n, sign) = b.face.axis();
            let (u, v) = b.face.in_face_axes();
            let w = smootherstep(sign * p[n] / (self.half[n] / 2.0));
            if w > 0.0 {
                f -= w * b.displacement(p[u], p[v]);
            }
        }
        f
    }

    /// Unit outward normal from central differences of the level set.
    pub fn normal_at(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let h = 1e-6;
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate() {
            let mut hi = p;
            let mut lo = p;
            hi[a] += h;
            lo[a] -= h;
            *ga = (self.level_set(hi) - self.level_set(lo)) / (2.0 * h);
        }
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if !(n > 1e-12) {
            return Err(Error::DegenerateNormal(p));
        }
        Ok([g[0] / n, g[1] / n, g[2] / n])
    }

    /// Bump displacement of a face point along that face's normal.
    fn face_displacement(&self, face: Face, u: f64, v: f64) -> f64 {
        self.bumps
            .iter()
            .filter(|b| b.face == face)
            .map(|b| b.displacement(u, v))
            .sum()
    }

    /// Samples the level set on the spec's grid.
    pub fn volume(&self, spec: &BoxBumpSpec) -> Result<ScalarVolume> {
        ScalarVolume::from_fn(spec.grid_dims, spec.origin(), spec.spacing(), |p| self.level_set(p))
    }
}

impl NormalField for BoxShape {
    fn normal(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        self.normal_at(p)
    }
}

/// Fixed face parameterization: (face, u, v) per correspondence, in order
/// +x, −x, +y, −y, +z, −z, then v-major within a face.
pub fn face_samples(spec: &BoxBumpSpec) -> Vec<(Face, f64, f64)> {
    let mut out = Vec::with_capacity(spec.n_points());
    for face in Face::ALL {
        let (u, v) = face.in_face_axes();
        let (nu, nv) = (spec.face_grid[u], spec.face_grid[v]);
        let (lu, lv) = (spec.extents[u], spec.extents[v]);
        for j in 0..nv {
            for i in 0..nu {
                let cu = -lu / 2.0 + (i as f64 + 0.5) * lu / nu as f64;
                let cv = -lv / 2.0 + (j as f64 + 0.5) * lv / nv as f64;
                out.push((face, cu, cv));
            }
        }
    }
    out
}

/// Correspondences of `shape`: each face sample moved along its face normal
/// by the bump displacement.
pub fn correspondences(spec: &BoxBumpSpec, shape: &BoxShape) -> Result<PointSet> {
    let half = spec.half();
    let pts: Vec<[f64; 3]> = face_samples(spec)
        .into_iter()
        .map(|(face, cu, cv)| {
            let (n, sign) = face.axis();
            let (u, v) = face.in_face_axes();
            let mut p = [0.0; 3];
            p[u] = cu;
            p[v] = cv;
            p[n] = sign * (half[n] + shape.face_displacement(face, cu, cv));
            p
        })
        .collect();
    PointSet::from_points3(&pts)
}

/// Ground truth carried alongside generated shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// Latent bump position s per shape.
    pub latent: Vec<f64>,
    /// Per-correspondence lesion support (all false without a lesion).
    pub lesion_mask: Vec<bool>,
    /// Per shape: curves `apex` (top-bump apex) and `corners` (box corners).
    pub landmarks: Vec<LandmarkSet>,
}

fn shape_landmarks(spec: &BoxBumpSpec, top: &Bump) -> Result<LandmarkSet> {
    let h = spec.half();
    let apex = [top.center[0], top.center[1], h[2] + top.height];
    let mut corners = Vec::with_capacity(8);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                corners.push([sx * h[0], sy * h[1], sz * h[2]]);
            }
        }
    }
    LandmarkSet::new(vec![
        LandmarkCurve {
            name: "apex".into(),
            points: PointSet::from_points3(&[apex])?,
        },
        LandmarkCurve {
            name: "corners".into(),
            points: PointSet::from_points3(&corners)?,
        },
    ])
}

/// A generated ensemble with its volumes and analytic shapes.
#[derive(Debug, Clone)]
pub struct BoxBumpEnsemble {
    pub ensemble: CorrespondenceEnsemble,
    pub volumes: Vec<ScalarVolume>,
    pub shapes: Vec<BoxShape>,
    pub truth: SyntheticTruth,
}

/// Shapes with top bumps at the given latent positions.
pub fn generate_box_bump_shapes(spec: &BoxBumpSpec, positions: &[f64], with_volumes: bool) -> Result<BoxBumpEnsemble> {
    spec.validate()?;
    if positions.is_empty() {
        return Err(Error::invalid("no shapes requested"));
    }
    if let Some(s) = positions.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("bump position {s} outside [0, 1]")));
    }
    let shapes = positions
        .iter()
        .map(|&s| BoxShape::new(spec, vec![spec.top_bump(s)]))
        .collect::<Result<Vec<_>>>()?;
    let points = shapes
        .iter()
        .map(|sh| correspondences(spec, sh))
        .collect::<Result<Vec<_>>>()?;
    let volumes = if with_volumes {
        shapes
            .par_iter()
            .map(|sh| sh.volume(spec))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let landmarks = positions
        .iter()
        .map(|&s| shape_landmarks(spec, &spec.top_bump(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoxBumpEnsemble {
        ensemble: CorrespondenceEnsemble::new(points)?,
        volumes,
        shapes,
        truth: SyntheticTruth {
            latent: positions.to_vec(),
            lesion_mask: vec![false; spec.n_points()],
            landmarks,
        },
    })
}

/// N shapes with bump positions evenly spaced over [0, 1].
pub fn generate_box_bump_ensemble(spec: &BoxBumpSpec, n: usize) -> Result<BoxBumpEnsemble> {
    if n < 2 {
        return Err(Error::invalid(format!("ensemble needs at least 2 shapes, got {n}")));
    }
    let positions: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    generate_box_bump_shapes(spec, &positions, true)
}

/// Side bump on the +x face, in (y, z) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideBumpSpec {
    pub center: [f64; 2],
    pub sigma: f64,
    pub height: f64,
}

impl Default for SideBumpSpec {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            sigma: 3.0,
            height: 4.0,
        }
    }
}

impl SideBumpSpec {
    pub fn bump(&self) -> Bump {
        Bump {
            face: Face::PosX,
            center: self.center,
            sigma: self.sigma,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub points: PointSet,
    pub volume: ScalarVolume,
    pub shape: BoxShape,
    pub truth: SyntheticTruth,
}

/// A regular shape (top bump at `s`) with an extra bump on the +x face. The
/// mask marks correspondences displaced by more than 10% of |height|.
pub fn generate_side_bump_outlier(spec: &BoxBumpSpec, s: f64, side: &SideBumpSpec) -> Result<SyntheticSample> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("bump position {s} outside [0, 1]")));
    }
    let top = spec.top_bump(s);
    let side_bump = side.bump();
    let shape = BoxShape::new(spec, vec![top, side_bump])?;
    let points = correspondences(spec, &shape)?;
    let lesion_mask = face_samples(spec)
        .iter()
        .map(|&(face, u, v)| {
            face == Face::PosX && side.height != 0.0 && side_bump.displacement(u, v).abs() > 0.1 * side.height.abs()
        })
        .collect();
    Ok(SyntheticSample {
        volume: shape.volume(spec)?,
        points,
        shape,
        truth: SyntheticTruth {
            latent: vec![s],
            lesion_mask,
            landmarks: vec![shape_landmarks(spec, &top)?],
        },
    })
}

/// Archetype for one cluster: a top-face bump, plus the jitter applied to
/// its members.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterArchetype {
    pub center: [f64; 2],
    pub sigma: f64,
    pub height: f64,
}

/// Standard deviations of the per-shape jitter (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterJitter {
    pub center: f64,
    pub height: f64,
}

impl Default for ClusterJitter {
    fn default() -> Self {
        Self {
            center: 0.25,
            height: 0.1,
        }
    }
}

/// Up to four archetypes with equal bumps centred in the quadrants of the
/// top face.
pub fn quadrant_archetypes(spec: &BoxBumpSpec, k: usize) -> Result<Vec<ClusterArchetype>> {
    if !(2..=4).contains(&k) {
        return Err(Error::invalid(format!(
            "quadrant archetypes support 2..=4 clusters, got {k}"
        )));
    }
    let h = spec.half();
    let (qx, qy) = (h[0] / 2.0 - 2.5, h[1] / 2.0 - 2.5);
    let centers = [[qx, qy], [-qx, -qy], [-qx, qy], [qx, -qy]];
    Ok(centers[..k]
        .iter()
        .map(|&c| ClusterArchetype {
            center: c,
            sigma: 3.0,
            height: 4.0,
        })
        .collect())
}

/// `per_cluster` jittered copies of each archetype, labels in archetype
/// order. Fails when the closest pair of cluster means is less than five
/// times the largest within-cluster RMS spread.
pub fn generate_cluster_population<R: Rng + ?Sized>(
    spec: &BoxBumpSpec,
    archetypes: &[ClusterArchetype],
    per_cluster: usize,
    jitter: ClusterJitter,
    rng: &mut R,
) -> Result<(CorrespondenceEnsemble, Vec<usize>)> {
    spec.validate()?;
    if archetypes.len() < 2 {
        return Err(Error::invalid("cluster population needs at least 2 archetypes"));
    }
    if per_cluster == 0 {
        return Err(Error::invalid("per-cluster count must be positive"));
    }
    if !(jitter.center >= 0.0 && jitter.height >= 0.0) {
        return Err(Error::invalid("jitter must be nonnegative"));
    }
    let nc = Normal::new(0.0, jitter.center).map_err(|e| Error::invalid(e.to_string()))?;
    let nh = Normal::new(0.0, jitter.height).map_err(|e| Error::invalid(e.to_string()))?;
    let mut shapes = Vec::new();
    let mut labels = Vec::new();
    for (c, a) in archetypes.iter().enumerate() {
        for _ in 0..per_cluster {
            let bump = Bump {
                face: Face::PosZ,
                center: [a.center[0] + nc.sample(rng), a.center[1] + nc.sample(rng)],
                sigma: a.sigma,
                height: a.height + nh.sample(rng),
            };
            shapes.push(correspondences(spec, &BoxShape::new(spec, vec![bump])?)?);
            labels.push(c);
        }
    }
    let ens = CorrespondenceEnsemble::new(shapes)?;
    check_separation(&ens, &labels, archetypes.len())?;
    Ok((ens, labels))
}

fn check_separation(ens: &CorrespondenceEnsemble, labels: &[usize], k: usize) -> Result<()> {
    let vecs = ens.vectors();
    let means: Vec<_> = (0..k)
        .map(|c| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            flatten(&ens.subset(&idx).expect("nonempty cluster").mean_shape())
        })
        .collect();
    let spread = (0..k)
        .map(|c| {
            let members: Vec<_> = vecs.iter().zip(labels).filter(|(_, &l)| l == c).collect();
            let ss: f64 = members.iter().map(|(v, _)| (*v - &means[c]).norm_squared()).sum();
            (ss / members.len() as f64).sqrt()
        })
        .fold(0.0, f64::max);
    let mut sep = f64::INFINITY;
    for a in 0..k {
        for b in 0..a {
            sep = sep.min((&means[a] - &means[b]).norm());
        }
    }
    if sep < 5.0 * spread {
        return Err(Error::invalid(format!(
            "cluster separation {sep:.3} is below 5x the within-cluster spread {spread:.3}"
        )));
    }
    Ok(())
}

pub fn latent_csv(truth: &SyntheticTruth) -> String {
    let mut out = String::from("shape,bump_position\n");
    for (i, s) in truth.latent.iter().enumerate() {
        let _ = writeln!(out, "{i},{s}");
    }
    out
}

pub fn mask_csv(mask: &[bool]) -> String {
    let mut out = String::from("point,lesion\n");
    for (i, m) in mask.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", u8::from(*m));
    }
    out
}
