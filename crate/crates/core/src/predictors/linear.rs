//! Point-wise and coordinate-wise linear predictor: for each marker and
//! axis, an autoregressive model with intercept fitted once on the training
//! rows by ordinary least squares, then applied to later rows using the
//! true past samples.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::min_norm_solve;
use crate::predictors::OnlinePrediction;
use crate::tracking::{SplitSpec, TrajectorySet};

/// Fitted coefficients: `coeffs[c]` holds `[a_0, a_1, ..., a_L]` for series
/// column `c`, where `a_k` multiplies the sample `k` steps in the past.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub coeffs: Vec<Vec<f64>>,
    pub l_lin: usize,
    /// Number of columns whose normal system was rank deficient (solved in
    /// the minimum-norm sense).
    pub rank_deficient: usize,
}

impl LinearModel {
    /// One-step prediction for column `c` from the `l_lin` samples before
    /// the target (most recent first).
    pub fn predict(&self, c: usize, history_latest_first: &[f64]) -> f64 {
        let a = &self.coeffs[c];
        a[0] + a[1..]
            .iter()
            .zip(history_latest_first)
            .map(|(ak, s)| ak * s)
            .sum::<f64>()
    }
}

/// Fits on training rows only and predicts every frame from `l_lin` onward
/// (training frames included; evaluation slices the held-out ranges).
pub fn linear_predict(
    ts: &TrajectorySet,
    l_lin: usize,
    split: &SplitSpec,
) -> Result<(LinearModel, OnlinePrediction)> {
    if l_lin < 1 {
        return Err(Error::InvalidParam("L_lin must be >= 1".into()));
    }
    split.validate(ts.n_frames())?;
    if split.n_train < l_lin + 2 {
        return Err(Error::InvalidParam(format!(
            "need at least {} training rows for L_lin = {l_lin}",
            l_lin + 2
        )));
    }
    let width = 3 * ts.n_markers();
    let series = ts.series();
    let n_train = split.n_train;
    let n_fit = n_train - l_lin; // targets l_lin .. n_train

    let mut coeffs = Vec::with_capacity(width);
    let mut rank_deficient = 0usize;
    for c in 0..width {
        let design = DMatrix::from_fn(n_fit, l_lin + 1, |row, col| {
            if col == 0 {
                1.0
            } else {
                // lag `col`: sample col steps before the target row
                series[l_lin + row - col][c]
            }
        });
        let rhs = DVector::from_fn(n_fit, |row, _| series[l_lin + row][c]);
        let (sol, deficient) = min_norm_solve(&design, &rhs);
        if deficient {
            rank_deficient += 1;
        }
        coeffs.push(sol.as_slice().to_vec());
    }
    let model = LinearModel { coeffs, l_lin, rank_deficient };

    let start = Instant::now();
    let mut rows = Vec::with_capacity(ts.n_frames() - l_lin);
    for target in l_lin..ts.n_frames() {
        let mut row = Vec::with_capacity(width);
        for c in 0..width {
            let history: Vec<f64> = (1..=l_lin).map(|k| series[target - k][c]).collect();
            row.push(model.predict(c, &history));
        }
        rows.push(row);
    }
    let losses = rows
        .iter()
        .enumerate()
        .map(|(k, pred)| {
            0.5 * pred
                .iter()
                .zip(&series[l_lin + k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .collect();
    let steps = rows.len().max(1);
    let out = OnlinePrediction {
        first_frame: l_lin,
        rows,
        losses,
        mean_step_seconds: start.elapsed().as_secs_f64() / steps as f64,
    };
    Ok((model, out))
}
