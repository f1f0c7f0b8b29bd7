//! Geometric value types shared by every other module: correspondence point
//! sets, their flattened shape-space vectors, ensembles, similarity
//! transforms, landmark curves and signed-distance volumes.

mod align;
pub mod io;
mod split;
mod volume;

pub use align::{generalized_procrustes, rigid_align, ProcrustesResult};
pub use split::stratified_split;
pub use volume::{sdt_normal, ScalarVolume};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Flattened correspondence set in R^{dM}, interleaved per point
/// (`x1, y1, z1, x2, ...`).
pub type ShapeVector = DVector<f64>;

/// Ordered correspondence points in R^d, millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    /// Builds a point set from interleaved coordinates.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if coords.is_empty() {
            return Err(Error::invalid("point set must contain at least one point"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} coordinates cannot be split into {dim}-d points",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate in point {}", i / dim)));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points3(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(3, points.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points M.
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Point `i` as a 3-vector; 2-d points get z = 0.
    pub fn point3(&self, i: usize) -> [f64; 3] {
        let p = self.point(i);
        [p[0], p[1], if self.dim == 3 { p[2] } else { 0.0 }]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// d×M matrix with one column per point.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.len(), &self.coords)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.nrows(), m.as_slice().to_vec())
    }

    pub fn centroid(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim);
        for p in self.points() {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi;
            }
        }
        c / self.len() as f64
    }

    /// Reflects every point through the plane `coord[axis] = 0`. Used for
    /// mirrored anatomy (left/right) before building a common model.
    pub fn mirrored(&self, axis: usize) -> Result<Self> {
        if axis >= self.dim {
            return Err(Error::invalid(format!("mirror axis {axis} out of range")));
        }
        let mut coords = self.coords.clone();
        for p in coords.chunks_exact_mut(self.dim) {
            p[axis] = -p[axis];
        }
        Ok(Self { dim: self.dim, coords })
    }

    pub fn translated(&self, t: &[f64]) -> Self {
        let mut coords = self.coords.clone();
        for p in coords.chunks_exact_mut(self.dim) {
            for (c, ti) in p.iter_mut().zip(t) {
                *c += ti;
            }
        }
        Self { dim: self.dim, coords }
    }
}

/// Interleaved shape vector of a point set.
pub fn flatten(ps: &PointSet) -> ShapeVector {
    DVector::from_column_slice(&ps.coords)
}

pub fn unflatten(v: &ShapeVector, dim: usize) -> Result<PointSet> {
    if dim == 0 || !v.len().is_multiple_of(dim) {
        return Err(Error::invalid(format!(
            "shape vector of length {} is not divisible by dimension {dim}",
            v.len()
        )));
    }
    PointSet::new(dim, v.as_slice().to_vec())
}

/// N shapes sharing the same correspondence count and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceEnsemble {
    shapes: Vec<PointSet>,
}

impl CorrespondenceEnsemble {
    pub fn new(shapes: Vec<PointSet>) -> Result<Self> {
        let first = shapes
            .first()
            .ok_or_else(|| Error::invalid("ensemble must contain at least one shape"))?;
        let (dim, m) = (first.dim(), first.len());
        for (n, s) in shapes.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::invalid(format!(
                    "shape {n} has dimension {}, expected {dim}",
                    s.dim()
                )));
            }
            if s.len() != m {
                return Err(Error::invalid(format!(
                    "shape {n} has {} correspondences, expected {m}",
                    s.len()
                )));
            }
        }
        Ok(Self { shapes })
    }

    pub fn from_vectors(vectors: &[ShapeVector], dim: usize) -> Result<Self> {
        Self::new(vectors.iter().map(|v| unflatten(v, dim)).collect::<Result<_>>()?)
    }

    pub fn shapes(&self) -> &[PointSet] {
        &self.shapes
    }

    pub fn into_shapes(self) -> Vec<PointSet> {
        self.shapes
    }

    /// Number of shapes N.
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.shapes[0].dim()
    }

    /// Correspondences per shape M.
    pub fn n_points(&self) -> usize {
        self.shapes[0].len()
    }

    pub fn vectors(&self) -> Vec<ShapeVector> {
        self.shapes.iter().map(flatten).collect()
    }

    /// N×dM matrix, one shape vector per row.
    pub fn data_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let dm = self.dim() * self.n_points();
        DMatrix::from_fn(n, dm, |r, c| self.shapes[r].coords[c])
    }

    pub fn mean_shape(&self) -> PointSet {
        let mut acc = vec![0.0; self.shapes[0].coords.len()];
        for s in &self.shapes {
            for (a, c) in acc.iter_mut().zip(&s.coords) {
                *a += c;
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        PointSet {
            dim: self.dim(),
            coords: acc,
        }
    }

    /// Ensemble restricted to the given shape indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.shapes[i].clone()).collect())
    }

    /// Ensemble with shape `n` removed.
    pub fn without(&self, n: usize) -> Result<Self> {
        Self::new(
            self.shapes
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != n)
                .map(|(_, s)| s.clone())
                .collect(),
        )
    }
}

/// `x ↦ scale · R x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
    pub scale: f64,
}

impl SimilarityTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            rotation: DMatrix::identity(dim, dim),
            translation: DVector::zeros(dim),
            scale: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn apply(&self, ps: &PointSet) -> PointSet {
        let sr = &self.rotation * self.scale;
        let mut m = sr * ps.to_matrix();
        for mut col in m.column_iter_mut() {
            col += &self.translation;
        }
        PointSet {
            dim: ps.dim,
            coords: m.as_slice().to_vec(),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            rotation: &self.rotation * &other.rotation,
            translation: &self.rotation * &other.translation * self.scale + &self.translation,
            scale: self.scale * other.scale,
        }
    }
}

/// One named landmark curve (ordered points in R^3).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkCurve {
    pub name: String,
    pub points: PointSet,
}

/// Named groups of landmarks, kept in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    curves: Vec<LandmarkCurve>,
}

impl LandmarkSet {
    pub fn new(curves: Vec<LandmarkCurve>) -> Result<Self> {
        for c in &curves {
            if c.points.dim() != 3 {
                return Err(Error::invalid(format!("curve '{}' must be 3-d", c.name)));
            }
            if c.name.is_empty() || c.name.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "curve name '{}' must be nonempty without whitespace",
                    c.name
                )));
            }
        }
        for (i, c) in curves.iter().enumerate() {
            if curves[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::invalid(format!("duplicate curve name '{}'", c.name)));
            }
        }
        Ok(Self { curves })
    }

    pub fn curves(&self) -> &[LandmarkCurve] {
        &self.curves
    }

    pub fn curve(&self, name: &str) -> Option<&LandmarkCurve> {
        self.curves.iter().find(|c| c.name == name)
    }

    /// Applies `f` to every curve's points, keeping names and order.
    pub fn try_map<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&PointSet) -> Result<PointSet>,
    {
        let curves = self
            .curves
            .iter()
            .map(|c| {
                Ok(LandmarkCurve {
                    name: c.name.clone(),
                    points: f(&c.points)?,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(curves)
    }
}
