use crate::error::{Error, Result};

/// Regular 3-D grid of signed distances (mm). Values are stored row-major
/// with x the slowest and z the fastest index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 3],
    origin: [f64; 3],
    spacing: [f64; 3],
    values: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], origin: [f64; 3], spacing: [f64; 3], values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("volume dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "volume spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("volume origin must be finite"));
        }
        let expected: usize = dims.iter().product();
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "volume has {} values, dims {dims:?} require {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("volume contains non-finite values"));
        }
        Ok(Self {
            dims,
            origin,
            spacing,
            values,
        })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn<F>(dims: [usize; 3], origin: [f64; 3], spacing: [f64; 3], f: F) -> Result<Self>
    where
        F: Fn([f64; 3]) -> f64,
    {
        let mut values = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    values.push(f([
                        origin[0] + i as f64 * spacing[0],
                        origin[1] + j as f64 * spacing[1],
                        origin[2] + k as f64 * spacing[2],
                    ]));
                }
            }
        }
        Self::new(dims, origin, spacing, values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    /// True when `p` lies at least one voxel inside every face of the grid.
    pub fn in_valid_region(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| {
            let lo = self.origin[a] + self.spacing[a];
            let hi = self.origin[a] + (self.dims[a] as f64 - 2.0) * self.spacing[a];
            p[a] >= lo && p[a] <= hi
        })
    }

    /// Trilinear interpolation; `p` must lie inside the grid bounds.
    pub fn interpolate(&self, p: [f64; 3]) -> f64 {
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let f = (p[a] - self.origin[a]) / self.spacing[a];
            let max_base = self.dims[a].saturating_sub(2);
            let i0 = (f.floor().max(0.0) as usize).min(max_base);
            base[a] = i0;
            t[a] = if self.dims[a] > 1 { f - i0 as f64 } else { 0.0 };
        }
        let step = |a: usize| usize::from(self.dims[a] > 1);
        let mut acc = 0.0;
        for (di, wi) in [(0, 1.0 - t[0]), (step(0), t[0])] {
            for (dj, wj) in [(0, 1.0 - t[1]), (step(1), t[1])] {
                for (dk, wk) in [(0, 1.0 - t[2]), (step(2), t[2])] {
                    acc += wi * wj * wk * self.value(base[0] + di, base[1] + dj, base[2] + dk);
                }
            }
        }
        acc
    }
}

/// Unit outward normal at `p`: central differences (step = half a voxel per
/// axis) of the trilinearly interpolated field, normalised.
pub fn sdt_normal(vol: &ScalarVolume, p: [f64; 3]) -> Result<[f64; 3]> {
    if !vol.in_valid_region(p) {
        return Err(Error::OutOfBounds { index: 0, point: p });
    }
    let mut g = [0.0; 3];
    for a in 0..3 {
        let h = 0.5 * vol.spacing[a];
        let mut lo = p;
        let mut hi = p;
        lo[a] -= h;
        hi[a] += h;
        g[a] = (vol.interpolate(hi) - vol.interpolate(lo)) / (2.0 * h);
    }
    let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    if !(norm > 1e-12) {
        return Err(Error::DegenerateNormal(p));
    }
    Ok([g[0] / norm, g[1] / norm, g[2] / norm])
}
