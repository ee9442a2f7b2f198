//! Pyramidal iterative Lucas-Kanade deformable registration, the
//! registration-error metric, and the flow parameter grid search.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    gaussian_filter, scharr_gradient, subsample2, trilinear_sample, trilinear_sample_field,
    GaussianKernel, VectorField3, Volume3,
};

/// Parameters of the pyramidal iterative Lucas-Kanade solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowParams {
    pub sigma_init: f64,
    pub sigma_sub: f64,
    pub sigma_lk: f64,
    pub n_layers: usize,
    pub n_iter: usize,
    /// Window truncation radius for the LK kernel; `ceil(2 sigma_lk)` when
    /// absent.
    #[serde(default)]
    pub lk_window_h: Option<usize>,
    /// Relative Tikhonov regularization of the per-voxel tensor solve.
    #[serde(default = "default_tensor_epsilon")]
    pub tensor_epsilon: f64,
}

fn default_tensor_epsilon() -> f64 {
    1e-6
}

impl Default for FlowParams {
    /// Configuration that performed best in the flow grid search.
    fn default() -> Self {
        Self {
            sigma_init: 0.2,
            sigma_sub: 0.2,
            sigma_lk: 2.0,
            n_layers: 3,
            n_iter: 3,
            lk_window_h: None,
            tensor_epsilon: default_tensor_epsilon(),
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("sigma_init", self.sigma_init),
            ("sigma_sub", self.sigma_sub),
            ("sigma_lk", self.sigma_lk),
        ] {
            if !(s > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be > 0, got {s}")));
            }
        }
        if self.n_layers < 1 || self.n_iter < 1 {
            return Err(Error::InvalidParam(
                "n_layers and n_iter must be >= 1".into(),
            ));
        }
        if self.lk_window_h == Some(0) {
            return Err(Error::InvalidParam("lk_window_h must be >= 1".into()));
        }
        if self.tensor_epsilon < 0.0 {
            return Err(Error::InvalidParam("tensor_epsilon must be >= 0".into()));
        }
        Ok(())
    }

    pub fn window_h(&self) -> usize {
        self.lk_window_h
            .unwrap_or_else(|| (2.0 * self.sigma_lk).ceil().max(1.0) as usize)
    }
}

/// Multiresolution representation: level 0 is the filtered input, each next
/// level is the previous one filtered and subsampled by 2.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Volume3>,
}

impl Pyramid {
    pub fn levels(&self) -> &[Volume3] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &Volume3 {
        &self.levels[l]
    }
}

pub fn build_pyramid(vol: &Volume3, params: &FlowParams) -> Result<Pyramid> {
    params.validate()?;
    let d = vol.dims();
    let need = 1usize << (params.n_layers - 1);
    if d.iter().any(|&n| n < need) {
        return Err(Error::PyramidTooDeep { dims: d });
    }
    let k_init = GaussianKernel::new(params.sigma_init)?;
    let k_sub = GaussianKernel::new(params.sigma_sub)?;
    let mut levels = vec![gaussian_filter(vol, &k_init)];
    for _ in 1..params.n_layers {
        let prev = levels.last().unwrap();
        levels.push(subsample2(&gaussian_filter(prev, &k_sub))?);
    }
    Ok(Pyramid { levels })
}

/// Per-voxel symmetric 3x3 tensor, stored as (xx, xy, xz, yy, yz, zz).
#[derive(Debug, Clone)]
pub struct TensorField3 {
    dims: [usize; 3],
    data: Vec<[f64; 6]>,
}

impl TensorField3 {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> [f64; 6] {
        self.data[x + self.dims[0] * (y + self.dims[1] * z)]
    }

    pub fn matrix(&self, x: usize, y: usize, z: usize) -> Matrix3<f64> {
        let t = self.at(x, y, z);
        Matrix3::new(t[0], t[1], t[2], t[1], t[3], t[4], t[2], t[4], t[5])
    }
}

/// Windowed Gaussian weight: the normal pdf of the Euclidean distance,
/// zero outside radius `h`.
#[inline]
fn windowed_kernel(dist2: f64, sigma: f64, h: f64) -> f64 {
    if dist2 >= h * h {
        0.0
    } else {
        (-(dist2) / (2.0 * sigma * sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
    }
}

fn gradients_at(grads: &[Volume3; 3], x: usize, y: usize, z: usize) -> [f64; 3] {
    [grads[0].at(x, y, z), grads[1].at(x, y, z), grads[2].at(x, y, z)]
}

/// Second-moment matrix of the Scharr gradients, weighted by the windowed
/// Gaussian kernel over a cube of radius `h` (voxels outside the grid are
/// skipped).
pub fn structure_tensor(level: &Volume3, params: &FlowParams) -> Result<TensorField3> {
    params.validate()?;
    let grads = scharr_gradient(level)?;
    Ok(structure_tensor_from_gradients(level.dims(), &grads, params))
}

fn structure_tensor_from_gradients(
    dims: [usize; 3],
    grads: &[Volume3; 3],
    params: &FlowParams,
) -> TensorField3 {
    let h = params.window_h() as isize;
    let hf = params.window_h() as f64;
    let sigma = params.sigma_lk;
    let n = dims[0] * dims[1] * dims[2];
    let data: Vec<[f64; 6]> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let x = (idx % dims[0]) as isize;
            let y = ((idx / dims[0]) % dims[1]) as isize;
            let z = (idx / (dims[0] * dims[1])) as isize;
            let mut t = [0.0f64; 6];
            for dz in -h..=h {
                let vz = z + dz;
                if vz < 0 || vz >= dims[2] as isize {
                    continue;
                }
                for dy in -h..=h {
                    let vy = y + dy;
                    if vy < 0 || vy >= dims[1] as isize {
                        continue;
                    }
                    for dx in -h..=h {
                        let vx = x + dx;
                        if vx < 0 || vx >= dims[0] as isize {
                            continue;
                        }
                        let dist2 = (dx * dx + dy * dy + dz * dz) as f64;
                        let w = windowed_kernel(dist2, sigma, hf);
                        if w == 0.0 {
                            continue;
                        }
                        let g =
                            gradients_at(grads, vx as usize, vy as usize, vz as usize);
                        t[0] += w * g[0] * g[0];
                        t[1] += w * g[0] * g[1];
                        t[2] += w * g[0] * g[2];
                        t[3] += w * g[1] * g[1];
                        t[4] += w * g[1] * g[2];
                        t[5] += w * g[2] * g[2];
                    }
                }
            }
            t
        })
        .collect();
    TensorField3 { dims, data }
}

fn windowed_rhs(
    dims: [usize; 3],
    grads: &[Volume3; 3],
    delta: &Volume3,
    params: &FlowParams,
) -> Vec<[f64; 3]> {
    let h = params.window_h() as isize;
    let hf = params.window_h() as f64;
    let sigma = params.sigma_lk;
    let n = dims[0] * dims[1] * dims[2];
    (0..n)
        .into_par_iter()
        .map(|idx| {
            let x = (idx % dims[0]) as isize;
            let y = ((idx / dims[0]) % dims[1]) as isize;
            let z = (idx / (dims[0] * dims[1])) as isize;
            let mut b = [0.0f64; 3];
            for dz in -h..=h {
                let vz = z + dz;
                if vz < 0 || vz >= dims[2] as isize {
                    continue;
                }
                for dy in -h..=h {
                    let vy = y + dy;
                    if vy < 0 || vy >= dims[1] as isize {
                        continue;
                    }
                    for dx in -h..=h {
                        let vx = x + dx;
                        if vx < 0 || vx >= dims[0] as isize {
                            continue;
                        }
                        let dist2 = (dx * dx + dy * dy + dz * dz) as f64;
                        let w = windowed_kernel(dist2, sigma, hf);
                        if w == 0.0 {
                            continue;
                        }
                        let (ux, uy, uz) = (vx as usize, vy as usize, vz as usize);
                        let di = delta.at(ux, uy, uz);
                        let g = gradients_at(grads, ux, uy, uz);
                        b[0] += w * di * g[0];
                        b[1] += w * di * g[1];
                        b[2] += w * di * g[2];
                    }
                }
            }
            b
        })
        .collect()
}

/// Solves `(G + eps I) v = b`; a failed factorization yields a zero update.
fn solve_regularized(t: [f64; 6], b: [f64; 3], tensor_epsilon: f64) -> [f64; 3] {
    let trace = t[0] + t[3] + t[5];
    let eps = tensor_epsilon * trace / 3.0 + 1e-12;
    let g = Matrix3::new(
        t[0] + eps,
        t[1],
        t[2],
        t[1],
        t[3] + eps,
        t[4],
        t[2],
        t[4],
        t[5] + eps,
    );
    match g.cholesky() {
        Some(ch) => {
            let v = ch.solve(&Vector3::new(b[0], b[1], b[2]));
            [v[0], v[1], v[2]]
        }
        None => [0.0; 3],
    }
}

/// Registers `moving` (the image at time t) against `fixed` (the image at
/// t1): returns the displacement field `u` with
/// `fixed(x) ~= moving(x + u(x))`.
pub fn lk_register(fixed: &Volume3, moving: &Volume3, params: &FlowParams) -> Result<VectorField3> {
    params.validate()?;
    if fixed.dims() != moving.dims() {
        return Err(Error::DimMismatch(format!(
            "fixed dims {:?} != moving dims {:?}",
            fixed.dims(),
            moving.dims()
        )));
    }
    let pyr_i = build_pyramid(fixed, params)?;
    let pyr_j = build_pyramid(moving, params)?;

    let top = params.n_layers - 1;
    let mut guess = VectorField3::zeros(pyr_i.level(top).dims());
    let mut refine = VectorField3::zeros(pyr_i.level(top).dims());

    for l in (0..params.n_layers).rev() {
        let level_i = pyr_i.level(l);
        let level_j = pyr_j.level(l);
        let dims = level_i.dims();
        let grads = scharr_gradient(level_i)?;
        let tensor = structure_tensor_from_gradients(dims, &grads, params);

        refine = VectorField3::zeros(dims);
        for _ in 0..params.n_iter {
            // residual image: fixed minus moving warped by guess + refinement
            let n = dims[0] * dims[1] * dims[2];
            let delta_data: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|idx| {
                    let x = idx % dims[0];
                    let y = (idx / dims[0]) % dims[1];
                    let z = idx / (dims[0] * dims[1]);
                    let g = guess.at(x, y, z);
                    let r = refine.at(x, y, z);
                    let p = [
                        x as f64 + g[0] + r[0],
                        y as f64 + g[1] + r[1],
                        z as f64 + g[2] + r[2],
                    ];
                    level_i.at(x, y, z) - trilinear_sample(level_j, p)
                })
                .collect();
            let delta = Volume3::new(dims, level_i.spacing(), delta_data)?;
            let rhs = windowed_rhs(dims, &grads, &delta, params);
            let updates: Vec<[f64; 3]> = (0..n)
                .into_par_iter()
                .map(|idx| {
                    let x = idx % dims[0];
                    let y = (idx / dims[0]) % dims[1];
                    let z = idx / (dims[0] * dims[1]);
                    solve_regularized(tensor.at(x, y, z), rhs[idx], params.tensor_epsilon)
                })
                .collect();
            for (r, u) in refine.data_mut().iter_mut().zip(&updates) {
                r[0] += u[0];
                r[1] += u[1];
                r[2] += u[2];
            }
        }

        if l > 0 {
            // propagate to the next finer level: g_{l-1}(x) = 2 (g_l + r_l)(x/2)
            let mut total = guess.clone();
            for (t, r) in total.data_mut().iter_mut().zip(refine.data()) {
                t[0] += r[0];
                t[1] += r[1];
                t[2] += r[2];
            }
            let fine_dims = pyr_i.level(l - 1).dims();
            let mut fine = VectorField3::zeros(fine_dims);
            for z in 0..fine_dims[2] {
                for y in 0..fine_dims[1] {
                    for x in 0..fine_dims[0] {
                        let v = trilinear_sample_field(
                            &total,
                            [x as f64 / 2.0, y as f64 / 2.0, z as f64 / 2.0],
                        );
                        fine.set(x, y, z, [2.0 * v[0], 2.0 * v[1], 2.0 * v[2]]);
                    }
                }
            }
            guess = fine;
        }
    }

    let mut out = guess;
    for (o, r) in out.data_mut().iter_mut().zip(refine.data()) {
        o[0] += r[0];
        o[1] += r[1];
        o[2] += r[2];
    }
    Ok(out)
}

/// Registration error over a sequence: RMS of the warped residual
/// `I(x, t1) - I(x + u(x, t_k), t_k)` across frames 2..n and all voxels
/// (or the given subset of voxels).
pub fn registration_error(
    seq: &[Volume3],
    dvfs: &[VectorField3],
    points: Option<&[[usize; 3]]>,
) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::InvalidParam("sequence must have >= 2 frames".into()));
    }
    if dvfs.len() != seq.len() - 1 {
        return Err(Error::DimMismatch(format!(
            "expected {} DVFs for {} frames, got {}",
            seq.len() - 1,
            seq.len(),
            dvfs.len()
        )));
    }
    let first = &seq[0];
    let dims = first.dims();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, dvf) in dvfs.iter().enumerate() {
        let frame = &seq[k + 1];
        if frame.dims() != dims || dvf.dims() != dims {
            return Err(Error::DimMismatch("frame/DVF dims differ".into()));
        }
        let mut accumulate = |x: usize, y: usize, z: usize| {
            let u = dvf.at(x, y, z);
            let warped =
                trilinear_sample(frame, [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]]);
            let res = first.at(x, y, z) - warped;
            sum += res * res;
            count += 1;
        };
        match points {
            Some(pts) => {
                for p in pts {
                    accumulate(p[0], p[1], p[2]);
                }
            }
            None => {
                for z in 0..dims[2] {
                    for y in 0..dims[1] {
                        for x in 0..dims[0] {
                            accumulate(x, y, z);
                        }
                    }
                }
            }
        }
    }
    Ok((sum / count as f64).sqrt())
}

/// Exhaustive flow parameter grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowGrid {
    pub sigma_init: Vec<f64>,
    pub sigma_sub: Vec<f64>,
    pub sigma_lk: Vec<f64>,
    pub n_layers: Vec<usize>,
    pub n_iter: Vec<usize>,
    #[serde(default)]
    pub lk_window_h: Option<usize>,
    #[serde(default = "default_tensor_epsilon")]
    pub tensor_epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowGridRow {
    pub sigma_init: f64,
    pub sigma_sub: f64,
    pub sigma_lk: f64,
    pub n_layers: usize,
    pub n_iter: usize,
    pub e_dvf: f64,
}

/// Per-parameter-value marginal: mean and minimum of the error over all
/// settings of the other parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Marginal {
    pub param: String,
    pub value: f64,
    pub mean_error: f64,
    pub min_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowGridResult {
    pub rows: Vec<FlowGridRow>,
    pub marginals: Vec<Marginal>,
    /// Index into `rows` of the best tuple (lexicographic tie-break).
    pub best: usize,
}

pub fn flow_grid_search(
    seq: &[Volume3],
    grid: &FlowGrid,
    points: Option<&[[usize; 3]]>,
) -> Result<FlowGridResult> {
    if grid.sigma_init.is_empty()
        || grid.sigma_sub.is_empty()
        || grid.sigma_lk.is_empty()
        || grid.n_layers.is_empty()
        || grid.n_iter.is_empty()
    {
        return Err(Error::InvalidParam("empty flow grid".into()));
    }
    // tuples enumerated in lexicographic order so the first minimum wins ties
    let mut tuples = Vec::new();
    for &si in &grid.sigma_init {
        for &ss in &grid.sigma_sub {
            for &sl in &grid.sigma_lk {
                for &nl in &grid.n_layers {
                    for &ni in &grid.n_iter {
                        tuples.push(FlowParams {
                            sigma_init: si,
                            sigma_sub: ss,
                            sigma_lk: sl,
                            n_layers: nl,
                            n_iter: ni,
                            lk_window_h: grid.lk_window_h,
                            tensor_epsilon: grid.tensor_epsilon,
                        });
                    }
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(tuples.len());
    for p in &tuples {
        let dvfs: Result<Vec<VectorField3>> = seq[1..]
            .iter()
            .map(|frame| lk_register(&seq[0], frame, p))
            .collect();
        let e = registration_error(seq, &dvfs?, points)?;
        rows.push(FlowGridRow {
            sigma_init: p.sigma_init,
            sigma_sub: p.sigma_sub,
            sigma_lk: p.sigma_lk,
            n_layers: p.n_layers,
            n_iter: p.n_iter,
            e_dvf: e,
        });
    }
    let marginals = flow_marginals(&rows);
    let best = rows
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.e_dvf.partial_cmp(&b.e_dvf).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok(FlowGridResult { rows, marginals, best })
}

/// Recomputes the per-parameter mean/min marginal tables from raw rows.
pub fn flow_marginals(rows: &[FlowGridRow]) -> Vec<Marginal> {
    let mut out = Vec::new();
    let extract: [(&str, fn(&FlowGridRow) -> f64); 5] = [
        ("sigma_init", |r| r.sigma_init),
        ("sigma_sub", |r| r.sigma_sub),
        ("sigma_lk", |r| r.sigma_lk),
        ("n_layers", |r| r.n_layers as f64),
        ("n_iter", |r| r.n_iter as f64),
    ];
    for (name, get) in extract {
        let mut values: Vec<f64> = rows.iter().map(get).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for v in values {
            let selected: Vec<&FlowGridRow> =
                rows.iter().filter(|r| get(r) == v).collect();
            let mean = selected.iter().map(|r| r.e_dvf).sum::<f64>() / selected.len() as f64;
            let min = selected
                .iter()
                .map(|r| r.e_dvf)
                .fold(f64::INFINITY, f64::min);
            out.push(Marginal {
                param: name.to_string(),
                value: v,
                mean_error: mean,
                min_error: min,
            });
        }
    }
    out
}
