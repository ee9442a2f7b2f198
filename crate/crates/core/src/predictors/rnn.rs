//! RNN position predictor trained online by real-time recurrent learning
//! (RTRL) with joint gradient clipping, plus its parameter grid search.
//!
//! One step follows the normative update order exactly: prediction and
//! error first, then the gradient blocks, one shared clipping of all
//! blocks, the output-weight update, the sensitivity-matrix update using
//! the pre-update recurrent weights, and finally the hidden-state update
//! using the pre-update weights.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optical_flow::Marginal;
use crate::predictors::{build_input, pair_count, OnlinePrediction};
use crate::tracking::{apply_norm, fit_norm, invert_norm_row, NormStats, SplitSpec, TrajectorySet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnConfig {
    /// Signal history length (samples).
    pub l: usize,
    /// Number of tracked markers.
    pub r: usize,
    /// Hidden-state dimension.
    pub q: usize,
    pub eta: f64,
    pub theta: f64,
    pub sigma_init_rnn: f64,
    pub seed: u64,
}

impl Default for RnnConfig {
    /// Configuration that performed best in the prediction grid search.
    fn default() -> Self {
        Self {
            l: 10,
            r: 3,
            q: 250,
            eta: 0.02,
            theta: 1.0,
            sigma_init_rnn: 0.02,
            seed: 0,
        }
    }
}

impl RnnConfig {
    /// Input dimension (excluding the bias unit).
    pub fn m(&self) -> usize {
        3 * self.r * self.l
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        3 * self.r
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 1 || self.q < 1 || self.r < 1 {
            return Err(Error::InvalidParam("L, q and r must be >= 1".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidParam(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.theta > 0.0) {
            return Err(Error::InvalidParam(format!(
                "theta must be > 0, got {}",
                self.theta
            )));
        }
        if !(self.sigma_init_rnn > 0.0) {
            return Err(Error::InvalidParam(format!(
                "sigma_init_rnn must be > 0, got {}",
                self.sigma_init_rnn
            )));
        }
        Ok(())
    }
}

/// Full training state: weights, hidden state, and the per-unit
/// sensitivity matrices of the hidden state w.r.t. the recurrent and input
/// weights.
#[derive(Debug, Clone)]
pub struct RnnRtrlState {
    w_a: DMatrix<f64>,
    w_b: DMatrix<f64>,
    w_c: DMatrix<f64>,
    x: DVector<f64>,
    lambda: Vec<DMatrix<f64>>,
    n: usize,
}

impl RnnRtrlState {
    /// Builds a state from explicit matrices (hidden state and sensitivities
    /// included), validating all dimensions.
    pub fn from_matrices(
        w_a: DMatrix<f64>,
        w_b: DMatrix<f64>,
        w_c: DMatrix<f64>,
        x: DVector<f64>,
        lambda: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let q = w_a.nrows();
        if w_a.ncols() != q || w_b.nrows() != q || w_c.ncols() != q || x.nrows() != q {
            return Err(Error::DimMismatch("inconsistent RNN weight dims".into()));
        }
        let m1 = w_b.ncols();
        if lambda.len() != q || lambda.iter().any(|l| l.nrows() != q || l.ncols() != q + m1) {
            return Err(Error::DimMismatch(format!(
                "each sensitivity matrix must be {q}x{}",
                q + m1
            )));
        }
        Ok(Self { w_a, w_b, w_c, x, lambda, n: 0 })
    }

    pub fn q(&self) -> usize {
        self.w_a.nrows()
    }

    pub fn w_a(&self) -> &DMatrix<f64> {
        &self.w_a
    }

    pub fn w_b(&self) -> &DMatrix<f64> {
        &self.w_b
    }

    pub fn w_c(&self) -> &DMatrix<f64> {
        &self.w_c
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn lambda(&self) -> &[DMatrix<f64>] {
        &self.lambda
    }

    pub fn step_count(&self) -> usize {
        self.n
    }

    fn all_finite(&self) -> bool {
        self.w_a.iter().all(|v| v.is_finite())
            && self.w_b.iter().all(|v| v.is_finite())
            && self.w_c.iter().all(|v| v.is_finite())
            && self.x.iter().all(|v| v.is_finite())
            && self.lambda.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }
}

/// Seeded Gaussian initialization; hidden state and sensitivities start at
/// zero. Deterministic per seed (weights are drawn in the order W_a, W_b,
/// W_c, column-major within each matrix).
pub fn rnn_init(cfg: &RnnConfig) -> Result<RnnRtrlState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.sigma_init_rnn)
        .map_err(|e| Error::InvalidParam(format!("weight init: {e}")))?;
    let (q, m1, p) = (cfg.q, cfg.m() + 1, cfg.p());
    let mut draw = |rows: usize, cols: usize| {
        DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| normal.sample(&mut rng)))
    };
    let w_a = draw(q, q);
    let w_b = draw(q, m1);
    let w_c = draw(p, q);
    Ok(RnnRtrlState {
        w_a,
        w_b,
        w_c,
        x: DVector::zeros(q),
        lambda: vec![DMatrix::zeros(q, q + m1); q],
        n: 0,
    })
}

/// Gradient-ascent direction blocks for one step: one row per hidden unit
/// (covering that unit's recurrent and input weights) plus the output block.
#[derive(Debug, Clone)]
pub struct JointGradient {
    pub w_rows: Vec<DVector<f64>>,
    pub w_c: DMatrix<f64>,
}

impl JointGradient {
    /// Frobenius norm over all blocks jointly.
    pub fn joint_norm(&self) -> f64 {
        let sq: f64 = self.w_rows.iter().map(|r| r.norm_squared()).sum::<f64>()
            + self.w_c.norm_squared();
        sq.sqrt()
    }
}

/// Uniformly rescales all blocks so the joint norm is at most `theta`;
/// returns the factor applied.
pub fn clip_joint_gradient(grad: &mut JointGradient, theta: f64) -> f64 {
    let kappa = grad.joint_norm();
    if kappa <= theta {
        return 1.0;
    }
    let scale = theta / kappa;
    for r in &mut grad.w_rows {
        *r *= scale;
    }
    grad.w_c *= scale;
    scale
}

/// One RTRL iteration: predict, compute the clipped gradient, update all
/// weights and sensitivities, advance the hidden state. Returns the
/// prediction `y_n` (in the normalized units of `u` and `d`).
pub fn rnn_step(
    state: &mut RnnRtrlState,
    u: &DVector<f64>,
    d: &DVector<f64>,
    eta: f64,
    theta: f64,
) -> Result<DVector<f64>> {
    let q = state.q();
    let m1 = state.w_b.ncols();
    if u.nrows() != m1 || d.nrows() != state.w_c.nrows() {
        return Err(Error::DimMismatch(format!(
            "input length {} / target length {} do not match state ({m1}, {})",
            u.nrows(),
            d.nrows(),
            state.w_c.nrows()
        )));
    }

    let y = &state.w_c * &state.x;
    let e = d - &y;

    let wc_e = state.w_c.transpose() * &e;
    let mut grad = JointGradient {
        w_rows: state.lambda.iter().map(|l| l.transpose() * &wc_e).collect(),
        w_c: &e * state.x.transpose(),
    };
    clip_joint_gradient(&mut grad, theta);

    state.w_c += eta * &grad.w_c;

    // xi = [x; u]; activations use the pre-update weights
    let mut xi = DVector::zeros(q + m1);
    xi.rows_mut(0, q).copy_from(&state.x);
    xi.rows_mut(q, m1).copy_from(u);
    let act = &state.w_a * &state.x + &state.w_b * u;
    let x_next = act.map(f64::tanh);
    let phi: DVector<f64> = act.map(|a| 1.0 - a.tanh() * a.tanh());

    let w_a_pre = state.w_a.clone();
    for j in 0..q {
        let dw = &grad.w_rows[j];
        for k in 0..q {
            state.w_a[(j, k)] += eta * dw[k];
        }
        for k in 0..m1 {
            state.w_b[(j, k)] += eta * dw[q + k];
        }
    }

    state
        .lambda
        .par_iter_mut()
        .enumerate()
        .for_each(|(j, lam)| {
            let mut next = &w_a_pre * &*lam;
            let mut row_j = next.row_mut(j);
            row_j += xi.transpose();
            for (i, mut row) in next.row_iter_mut().enumerate() {
                row *= phi[i];
            }
            *lam = next;
        });

    state.x = x_next;
    state.n += 1;

    if !y.iter().all(|v| v.is_finite()) || !state.all_finite() {
        return Err(Error::NumericalFailure { step: state.n });
    }
    Ok(y)
}

/// Runs the RNN online over the whole series: inputs are built from the
/// normalized rows, predictions are denormalized back to mm. Statistics are
/// fitted on the training split only.
pub fn rnn_run_online(
    ts: &TrajectorySet,
    stats: &NormStats,
    cfg: &RnnConfig,
) -> Result<OnlinePrediction> {
    cfg.validate()?;
    if cfg.r != ts.n_markers() {
        return Err(Error::DimMismatch(format!(
            "config expects {} markers, series has {}",
            cfg.r,
            ts.n_markers()
        )));
    }
    let steps = pair_count(ts.n_frames(), cfg.l)?;
    let norm = apply_norm(ts.series(), stats);
    let mut state = rnn_init(cfg)?;
    let mut rows = Vec::with_capacity(steps);
    let mut losses = Vec::with_capacity(steps);
    let mut elapsed = 0.0f64;
    for n in 0..steps {
        let u = DVector::from_vec(build_input(&norm, n, cfg.l));
        let d = DVector::from_vec(norm[n + cfg.l].clone());
        let t0 = Instant::now();
        let y = rnn_step(&mut state, &u, &d, cfg.eta, cfg.theta)?;
        elapsed += t0.elapsed().as_secs_f64();
        losses.push(0.5 * (&d - &y).norm_squared());
        rows.push(invert_norm_row(y.as_slice(), stats));
    }
    Ok(OnlinePrediction {
        first_frame: cfg.l,
        rows,
        losses,
        mean_step_seconds: elapsed / steps as f64,
    })
}

/// Mean Euclidean prediction error (mm) over the given frame range.
fn mae_mm(ts: &TrajectorySet, pred: &OnlinePrediction, range: std::ops::Range<usize>) -> Result<f64> {
    let r = ts.n_markers();
    let mut sum = 0.0;
    let mut count = 0usize;
    for frame in range {
        let row = pred.row_for_frame(frame).ok_or_else(|| {
            Error::InvalidParam(format!("no prediction available for frame {frame}"))
        })?;
        let truth = &ts.series()[frame];
        for p in 0..r {
            let d2: f64 = (0..3)
                .map(|c| (row[3 * p + c] - truth[3 * p + c]).powi(2))
                .sum();
            sum += d2.sqrt();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnGrid {
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
    pub sigma_init_rnn: Vec<f64>,
    pub l: Vec<usize>,
    pub q: Vec<usize>,
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_runs() -> usize {
    10
}

impl Default for RnnGrid {
    /// Search ranges used for the prediction study.
    fn default() -> Self {
        Self {
            theta: vec![0.5, 1.0, 2.0],
            eta: vec![0.01, 0.02, 0.05, 0.10],
            sigma_init_rnn: vec![0.01, 0.02, 0.05, 0.10],
            l: vec![10, 25, 40],
            q: vec![10, 25, 40, 55, 100, 145, 200, 250],
            n_runs: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnGridRow {
    pub theta: f64,
    pub eta: f64,
    pub sigma_init_rnn: f64,
    pub l: usize,
    pub q: usize,
    /// Validation MAE (mm) averaged over the runs that finished without
    /// numerical errors; absent when every run failed.
    pub mae_mm: Option<f64>,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnGridResult {
    pub rows: Vec<RnnGridRow>,
    pub marginals: Vec<Marginal>,
    /// Index of the best valid tuple (lexicographic tie-break), if any.
    pub best: Option<usize>,
}

/// Averages the per-run validation errors, skipping failed runs.
fn aggregate_runs(maes: &[Option<f64>]) -> (Option<f64>, usize) {
    let ok: Vec<f64> = maes.iter().filter_map(|m| *m).collect();
    let n_failed = maes.len() - ok.len();
    if ok.is_empty() {
        (None, n_failed)
    } else {
        (Some(ok.iter().sum::<f64>() / ok.len() as f64), n_failed)
    }
}

pub fn rnn_grid_search(
    ts: &TrajectorySet,
    split: &SplitSpec,
    grid: &RnnGrid,
) -> Result<RnnGridResult> {
    if grid.theta.is_empty()
        || grid.eta.is_empty()
        || grid.sigma_init_rnn.is_empty()
        || grid.l.is_empty()
        || grid.q.is_empty()
        || grid.n_runs == 0
    {
        return Err(Error::InvalidParam("empty RNN grid".into()));
    }
    split.validate(ts.n_frames())?;
    let stats = fit_norm(ts, split)?;

    // lexicographic enumeration so the first minimum wins ties
    let mut tuples = Vec::new();
    for &theta in &grid.theta {
        for &eta in &grid.eta {
            for &sigma in &grid.sigma_init_rnn {
                for &l in &grid.l {
                    for &q in &grid.q {
                        tuples.push(RnnConfig {
                            l,
                            r: ts.n_markers(),
                            q,
                            eta,
                            theta,
                            sigma_init_rnn: sigma,
                            seed: 0,
                        });
                    }
                }
            }
        }
    }

    let rows: Vec<RnnGridRow> = tuples
        .iter()
        .map(|cfg| {
            let maes: Vec<Option<f64>> = (0..grid.n_runs)
                .into_par_iter()
                .map(|run| {
                    let mut c = cfg.clone();
                    c.seed = grid.seed + run as u64;
                    match rnn_run_online(ts, &stats, &c) {
                        Ok(pred) => mae_mm(ts, &pred, split.val_range()).ok(),
                        Err(Error::NumericalFailure { .. }) => None,
                        Err(_) => None,
                    }
                })
                .collect();
            let (mae, n_failed) = aggregate_runs(&maes);
            RnnGridRow {
                theta: cfg.theta,
                eta: cfg.eta,
                sigma_init_rnn: cfg.sigma_init_rnn,
                l: cfg.l,
                q: cfg.q,
                mae_mm: mae,
                n_failed,
            }
        })
        .collect();

    let marginals = rnn_marginals(&rows);
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.mae_mm.map(|m| (i, m)))
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
        .map(|(i, _)| i);
    Ok(RnnGridResult { rows, marginals, best })
}

/// Per-parameter mean/min marginals over valid tuples.
pub fn rnn_marginals(rows: &[RnnGridRow]) -> Vec<Marginal> {
    let mut out = Vec::new();
    let extract: [(&str, fn(&RnnGridRow) -> f64); 5] = [
        ("theta", |r| r.theta),
        ("eta", |r| r.eta),
        ("sigma_init_rnn", |r| r.sigma_init_rnn),
        ("l", |r| r.l as f64),
        ("q", |r| r.q as f64),
    ];
    for (name, get) in extract {
        let mut values: Vec<f64> = rows.iter().map(get).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for v in values {
            let selected: Vec<f64> = rows
                .iter()
                .filter(|r| get(r) == v)
                .filter_map(|r| r.mae_mm)
                .collect();
            if selected.is_empty() {
                continue;
            }
            out.push(Marginal {
                param: name.to_string(),
                value: v,
                mean_error: selected.iter().sum::<f64>() / selected.len() as f64,
                min_error: selected.iter().copied().fold(f64::INFINITY, f64::min),
            });
        }
    }
    out
}
