//! Dense 3D scalar grids and the numerical primitives the registration
//! pipeline is built on: trilinear sampling, separable Gaussian filtering,
//! factor-2 subsampling, Scharr gradients and pull-warping.
//!
//! All grids are row-major with x fastest: `idx = x + nx * (y + ny * z)`.
//! Filters use replicate padding and sampling clamps coordinates to the
//! grid, so every operation here is total on valid volumes.

use crate::error::{Error, Result};

/// Dense 3D scalar grid with physical spacing (mm per voxel).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
}

impl Volume3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParam(format!("zero dimension in {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::DimMismatch(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParam("non-finite voxel value".into()));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            dims,
            spacing,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: [usize; 3], spacing: [f64; 3], f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self { dims, spacing, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Voxel value with indices clamped to the grid (replicate padding).
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize, z: isize) -> f64 {
        let cx = x.clamp(0, self.dims[0] as isize - 1) as usize;
        let cy = y.clamp(0, self.dims[1] as isize - 1) as usize;
        let cz = z.clamp(0, self.dims[2] as isize - 1) as usize;
        self.at(cx, cy, cz)
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Dense 3D grid of 3-vectors (displacement field, voxel units).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3 {
    dims: [usize; 3],
    data: Vec<[f64; 3]>,
}

impl VectorField3 {
    pub fn new(dims: [usize; 3], data: Vec<[f64; 3]>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::DimMismatch(format!(
                "field data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![[0.0; 3]; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.data
    }

    #[inline]
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: [f64; 3]) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize, z: isize) -> [f64; 3] {
        let cx = x.clamp(0, self.dims[0] as isize - 1) as usize;
        let cy = y.clamp(0, self.dims[1] as isize - 1) as usize;
        let cz = z.clamp(0, self.dims[2] as isize - 1) as usize;
        self.at(cx, cy, cz)
    }
}

/// Truncated discrete Gaussian, the 1D factor of the separable 3D filter.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    half_width: usize,
    weights: Vec<f64>,
}

impl GaussianKernel {
    /// Kernel with the default 3-sigma support: `half_width = ceil(3 sigma)`.
    pub fn new(sigma: f64) -> Result<Self> {
        let hw = (3.0 * sigma).ceil().max(1.0) as usize;
        Self::with_half_width(sigma, hw)
    }

    pub fn with_half_width(sigma: f64, half_width: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParam(format!("sigma must be > 0, got {sigma}")));
        }
        if half_width < 1 {
            return Err(Error::InvalidParam("half_width must be >= 1".into()));
        }
        let mut weights: Vec<f64> = (-(half_width as isize)..=half_width as isize)
            .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
            .collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self { sigma, half_width, weights })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    /// Normalized weights, index 0 corresponds to offset `-half_width`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[inline]
fn clampf(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Trilinear sample at a continuous point in voxel coordinates.
/// Out-of-grid coordinates are clamped to the boundary voxel.
pub fn trilinear_sample(vol: &Volume3, p: [f64; 3]) -> f64 {
    let d = vol.dims();
    let x = clampf(p[0], 0.0, (d[0] - 1) as f64);
    let y = clampf(p[1], 0.0, (d[1] - 1) as f64);
    let z = clampf(p[2], 0.0, (d[2] - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let z0 = z.floor() as usize;
    let x1 = (x0 + 1).min(d[0] - 1);
    let y1 = (y0 + 1).min(d[1] - 1);
    let z1 = (z0 + 1).min(d[2] - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let fz = z - z0 as f64;

    let c000 = vol.at(x0, y0, z0);
    let c100 = vol.at(x1, y0, z0);
    let c010 = vol.at(x0, y1, z0);
    let c110 = vol.at(x1, y1, z0);
    let c001 = vol.at(x0, y0, z1);
    let c101 = vol.at(x1, y0, z1);
    let c011 = vol.at(x0, y1, z1);
    let c111 = vol.at(x1, y1, z1);

    let c00 = c000 * (1.0 - fx) + c100 * fx;
    let c10 = c010 * (1.0 - fx) + c110 * fx;
    let c01 = c001 * (1.0 - fx) + c101 * fx;
    let c11 = c011 * (1.0 - fx) + c111 * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Trilinear sample of a vector field, per component, clamped.
pub fn trilinear_sample_field(field: &VectorField3, p: [f64; 3]) -> [f64; 3] {
    let d = field.dims();
    let x = clampf(p[0], 0.0, (d[0] - 1) as f64);
    let y = clampf(p[1], 0.0, (d[1] - 1) as f64);
    let z = clampf(p[2], 0.0, (d[2] - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let z0 = z.floor() as usize;
    let x1 = (x0 + 1).min(d[0] - 1);
    let y1 = (y0 + 1).min(d[1] - 1);
    let z1 = (z0 + 1).min(d[2] - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let fz = z - z0 as f64;

    let mut out = [0.0; 3];
    for c in 0..3 {
        let c000 = field.at(x0, y0, z0)[c];
        let c100 = field.at(x1, y0, z0)[c];
        let c010 = field.at(x0, y1, z0)[c];
        let c110 = field.at(x1, y1, z0)[c];
        let c001 = field.at(x0, y0, z1)[c];
        let c101 = field.at(x1, y0, z1)[c];
        let c011 = field.at(x0, y1, z1)[c];
        let c111 = field.at(x1, y1, z1)[c];
        let c00 = c000 * (1.0 - fx) + c100 * fx;
        let c10 = c010 * (1.0 - fx) + c110 * fx;
        let c01 = c001 * (1.0 - fx) + c101 * fx;
        let c11 = c011 * (1.0 - fx) + c111 * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        out[c] = c0 * (1.0 - fz) + c1 * fz;
    }
    out
}

fn convolve_axis(vol: &Volume3, weights: &[f64], axis: usize) -> Volume3 {
    let d = vol.dims();
    let hw = (weights.len() / 2) as isize;
    let mut out = Volume3::zeros(d, vol.spacing());
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let mut acc = 0.0;
                for (k, &w) in weights.iter().enumerate() {
                    let off = k as isize - hw;
                    let v = match axis {
                        0 => vol.at_clamped(x as isize + off, y as isize, z as isize),
                        1 => vol.at_clamped(x as isize, y as isize + off, z as isize),
                        _ => vol.at_clamped(x as isize, y as isize, z as isize + off),
                    };
                    acc += w * v;
                }
                out.set(x, y, z, acc);
            }
        }
    }
    out
}

/// Separable isotropic Gaussian filter (X, then Y, then Z) with replicate
/// padding at the boundaries.
pub fn gaussian_filter(vol: &Volume3, kernel: &GaussianKernel) -> Volume3 {
    let gx = convolve_axis(vol, kernel.weights(), 0);
    let gy = convolve_axis(&gx, kernel.weights(), 1);
    convolve_axis(&gy, kernel.weights(), 2)
}

/// Subsampling by a factor 2: `out(x) = in(2x)`, output dims `floor(dims/2)`.
pub fn subsample2(vol: &Volume3) -> Result<Volume3> {
    let d = vol.dims();
    if d.iter().any(|&n| n < 2) {
        return Err(Error::PyramidTooDeep { dims: d });
    }
    let nd = [d[0] / 2, d[1] / 2, d[2] / 2];
    let mut out = Volume3::zeros(nd, vol.spacing());
    for z in 0..nd[2] {
        for y in 0..nd[1] {
            for x in 0..nd[0] {
                out.set(x, y, z, vol.at(2 * x, 2 * y, 2 * z));
            }
        }
    }
    Ok(out)
}

const SCHARR_SMOOTH: [f64; 3] = [3.0 / 16.0, 10.0 / 16.0, 3.0 / 16.0];
const SCHARR_DERIV: [f64; 3] = [-0.5, 0.0, 0.5];

/// 3D Scharr gradient: central-difference stencil along the derivative axis,
/// (3, 10, 3)/16 smoothing along the two orthogonal axes, replicate padding.
pub fn scharr_gradient(vol: &Volume3) -> Result<[Volume3; 3]> {
    let d = vol.dims();
    if d.iter().any(|&n| n < 3) {
        return Err(Error::InvalidParam(format!(
            "scharr_gradient requires dims >= 3 per axis, got {d:?}"
        )));
    }
    let grad = |axis: usize| {
        let mut v = vol.clone();
        for a in 0..3 {
            let w: &[f64] = if a == axis { &SCHARR_DERIV } else { &SCHARR_SMOOTH };
            v = convolve_axis(&v, w, a);
        }
        v
    };
    Ok([grad(0), grad(1), grad(2)])
}

/// Pull-warp: `out(x) = vol(x + dvf(x))`, sampled trilinearly with clamping.
pub fn warp_pull(vol: &Volume3, dvf: &VectorField3) -> Result<Volume3> {
    let d = vol.dims();
    if d != dvf.dims() {
        return Err(Error::DimMismatch(format!(
            "volume dims {:?} != field dims {:?}",
            d,
            dvf.dims()
        )));
    }
    let mut out = Volume3::zeros(d, vol.spacing());
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let u = dvf.at(x, y, z);
                let p = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
                out.set(x, y, z, trilinear_sample(vol, p));
            }
        }
    }
    Ok(out)
}
