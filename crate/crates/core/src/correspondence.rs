//! Linear correspondence model relating voxel motion to marker motion, and
//! Nadaraya-Watson forward warping of the initial image by a (predicted)
//! displacement field.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::min_norm_solve;
use crate::volume::{VectorField3, Volume3};

/// Per-voxel coefficients gamma_p(x): the displacement of a voxel is
/// modeled as a linear combination of the marker displacements, with the
/// same coefficients for the x, y and z components.
#[derive(Debug, Clone)]
pub struct CorrespondenceModel {
    dims: [usize; 3],
    spacing: [f64; 3],
    /// One coefficient grid per marker, voxel-major.
    gamma: Vec<Vec<f64>>,
    /// Voxels whose regression system was rank deficient (minimum-norm
    /// solution used).
    pub rank_deficient: usize,
}

impl CorrespondenceModel {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        gamma: Vec<Vec<f64>>,
        rank_deficient: usize,
    ) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if gamma.is_empty() || gamma.iter().any(|g| g.len() != n) {
            return Err(Error::DimMismatch(format!(
                "each coefficient grid must have {n} values"
            )));
        }
        Ok(Self { dims, spacing, gamma, rank_deficient })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn n_markers(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[Vec<f64>] {
        &self.gamma
    }
}

/// Kernel parameters of the forward warp.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WarpParams {
    #[serde(default = "default_sigma_w")]
    pub sigma_w: f64,
    #[serde(default = "default_h")]
    pub h: usize,
    /// Intensity assigned to voxels with no antecedent within the window.
    #[serde(default)]
    pub fill_value: f64,
}

fn default_sigma_w() -> f64 {
    0.5
}

fn default_h() -> usize {
    3
}

impl Default for WarpParams {
    fn default() -> Self {
        Self { sigma_w: 0.5, h: 3, fill_value: 0.0 }
    }
}

impl WarpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w > 0.0) {
            return Err(Error::InvalidParam(format!(
                "sigma_w must be > 0, got {}",
                self.sigma_w
            )));
        }
        if self.h < 1 {
            return Err(Error::InvalidParam("h must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fits the per-voxel coefficients on training data: `dvfs[n]` is the DVF
/// of training frame n (voxel units), `marker_rows[n]` the matching 3r
/// marker displacements in mm. Components are converted to mm through the
/// spacing so that one shared coefficient per marker is meaningful even on
/// anisotropic grids.
pub fn fit_correspondence(
    dvfs: &[VectorField3],
    marker_rows: &[Vec<f64>],
    spacing: [f64; 3],
) -> Result<CorrespondenceModel> {
    if dvfs.is_empty() || dvfs.len() != marker_rows.len() {
        return Err(Error::DimMismatch(format!(
            "{} DVFs vs {} marker rows",
            dvfs.len(),
            marker_rows.len()
        )));
    }
    let width = marker_rows[0].len();
    if width == 0 || width % 3 != 0 || marker_rows.iter().any(|r| r.len() != width) {
        return Err(Error::DimMismatch("marker rows must all be 3r wide".into()));
    }
    let r = width / 3;
    let n_frames = dvfs.len();
    if 3 * n_frames < r {
        return Err(Error::InvalidParam(format!(
            "need at least {r} equations to fit {r} coefficients"
        )));
    }
    let dims = dvfs[0].dims();
    if dvfs.iter().any(|d| d.dims() != dims) {
        return Err(Error::DimMismatch("DVF dims differ across frames".into()));
    }

    // shared design matrix: 3 rows per frame, one column per marker
    let design = DMatrix::from_fn(3 * n_frames, r, |row, p| {
        let (n, c) = (row / 3, row % 3);
        marker_rows[n][3 * p + c]
    });

    let n_vox = dims[0] * dims[1] * dims[2];
    let solved: Vec<(Vec<f64>, bool)> = (0..n_vox)
        .into_par_iter()
        .map(|idx| {
            let rhs = DVector::from_fn(3 * n_frames, |row, _| {
                let (n, c) = (row / 3, row % 3);
                dvfs[n].data()[idx][c] * spacing[c]
            });
            let (sol, deficient) = min_norm_solve(&design, &rhs);
            (sol.as_slice().to_vec(), deficient)
        })
        .collect();

    let rank_deficient = solved.iter().filter(|(_, d)| *d).count();
    let mut gamma = vec![vec![0.0; n_vox]; r];
    for (idx, (sol, _)) in solved.iter().enumerate() {
        for p in 0..r {
            gamma[p][idx] = sol[p];
        }
    }
    CorrespondenceModel::new(dims, spacing, gamma, rank_deficient)
}

/// Evaluates the model for one marker displacement row (mm); the result is
/// a displacement field in voxel units.
pub fn reconstruct_dvf(model: &CorrespondenceModel, marker_row: &[f64]) -> Result<VectorField3> {
    let r = model.n_markers();
    if marker_row.len() != 3 * r {
        return Err(Error::DimMismatch(format!(
            "marker row has {} entries, model expects {}",
            marker_row.len(),
            3 * r
        )));
    }
    let dims = model.dims;
    let n_vox = dims[0] * dims[1] * dims[2];
    let data: Vec<[f64; 3]> = (0..n_vox)
        .map(|idx| {
            let mut u = [0.0f64; 3];
            for p in 0..r {
                let g = model.gamma[p][idx];
                for c in 0..3 {
                    u[c] += g * marker_row[3 * p + c];
                }
            }
            for c in 0..3 {
                u[c] /= model.spacing[c];
            }
            u
        })
        .collect();
    VectorField3::new(dims, data)
}

/// Windowed Gaussian: pdf of the distance, zero at or beyond `h`.
#[inline]
fn kernel(dist2: f64, sigma: f64, h: f64) -> f64 {
    if dist2 >= h * h {
        0.0
    } else {
        (-dist2 / (2.0 * sigma * sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
    }
}

/// Forward warp by scattering: each source voxel deposits its intensity at
/// its displaced position, weighted by the windowed Gaussian of the
/// distance to each destination voxel; destinations with no antecedent get
/// the fill value. Cost is O(V h^3).
pub fn nw_forward_warp(src: &Volume3, dvf: &VectorField3, wp: &WarpParams) -> Result<Volume3> {
    wp.validate()?;
    if src.dims() != dvf.dims() {
        return Err(Error::DimMismatch(format!(
            "volume dims {:?} != DVF dims {:?}",
            src.dims(),
            dvf.dims()
        )));
    }
    let dims = src.dims();
    let hf = wp.h as f64;
    let mut num = vec![0.0f64; src.len()];
    let mut den = vec![0.0f64; src.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let u = dvf.at(x, y, z);
                let target = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
                let intensity = src.at(x, y, z);
                let mut bounds = [(0usize, 0usize); 3];
                let mut empty = false;
                for c in 0..3 {
                    let lo = (target[c] - hf).ceil().max(0.0);
                    let hi = (target[c] + hf).floor().min((dims[c] - 1) as f64);
                    if lo > hi {
                        empty = true;
                        break;
                    }
                    bounds[c] = (lo as usize, hi as usize);
                }
                if empty {
                    continue;
                }
                for dz in bounds[2].0..=bounds[2].1 {
                    for dy in bounds[1].0..=bounds[1].1 {
                        for dx in bounds[0].0..=bounds[0].1 {
                            let dist2 = (dx as f64 - target[0]).powi(2)
                                + (dy as f64 - target[1]).powi(2)
                                + (dz as f64 - target[2]).powi(2);
                            let w = kernel(dist2, wp.sigma_w, hf);
                            if w == 0.0 {
                                continue;
                            }
                            let idx = dx + dims[0] * (dy + dims[1] * dz);
                            num[idx] += intensity * w;
                            den[idx] += w;
                        }
                    }
                }
            }
        }
    }
    let data = num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| if d > 0.0 { n / d } else { wp.fill_value })
        .collect();
    Volume3::new(dims, src.spacing(), data)
}

/// Full image prediction: reconstruct the DVF from the predicted marker
/// row, then warp the initial image forward.
pub fn predict_image(
    src: &Volume3,
    model: &CorrespondenceModel,
    marker_row: &[f64],
    wp: &WarpParams,
) -> Result<Volume3> {
    let dvf = reconstruct_dvf(model, marker_row)?;
    nw_forward_warp(src, &dvf, wp)
}
