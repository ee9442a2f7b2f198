//! Least-mean-squares predictor: a linear filter over the same normalized
//! input vectors as the RNN, updated by stochastic gradient descent.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::predictors::{build_input, pair_count, OnlinePrediction};
use crate::tracking::{apply_norm, invert_norm_row, NormStats, TrajectorySet};

/// Filter weights, zero-initialized: p outputs from m+1 inputs.
#[derive(Debug, Clone)]
pub struct LmsState {
    pub w: DMatrix<f64>,
}

impl LmsState {
    pub fn new(p: usize, m1: usize) -> Self {
        Self { w: DMatrix::zeros(p, m1) }
    }

    /// One LMS iteration: predict `y = W u`, then `W += eta (d - y) u^T`.
    pub fn step(&mut self, u: &DVector<f64>, d: &DVector<f64>, eta: f64, n: usize) -> Result<DVector<f64>> {
        let y = &self.w * u;
        let e = d - &y;
        self.w += eta * &e * u.transpose();
        if !y.iter().all(|v| v.is_finite()) || !self.w.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure { step: n });
        }
        Ok(y)
    }
}

/// Runs LMS over normalized rows; returns (predicted normalized rows,
/// per-step losses). The first prediction corresponds to frame `l_lms`.
pub fn lms_run_rows(
    rows: &[Vec<f64>],
    l_lms: usize,
    eta_lms: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if l_lms < 1 {
        return Err(Error::InvalidParam("L_lms must be >= 1".into()));
    }
    if !(eta_lms >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "eta_lms must be >= 0, got {eta_lms}"
        )));
    }
    let steps = pair_count(rows.len(), l_lms)?;
    let p = rows[0].len();
    let m1 = 1 + l_lms * p;
    let mut state = LmsState::new(p, m1);
    let mut preds = Vec::with_capacity(steps);
    let mut losses = Vec::with_capacity(steps);
    for n in 0..steps {
        let u = DVector::from_vec(build_input(rows, n, l_lms));
        let d = DVector::from_vec(rows[n + l_lms].clone());
        let y = state.step(&u, &d, eta_lms, n + 1)?;
        losses.push(0.5 * (&d - &y).norm_squared());
        preds.push(y.as_slice().to_vec());
    }
    Ok((preds, losses))
}

/// LMS over a marker series: z-scored inputs (training statistics),
/// denormalized mm outputs. Defaults from the comparison study are
/// `l_lms = 10`, `eta_lms = 0.01`.
pub fn lms_run(
    ts: &TrajectorySet,
    stats: &NormStats,
    l_lms: usize,
    eta_lms: f64,
) -> Result<OnlinePrediction> {
    let norm = apply_norm(ts.series(), stats);
    let start = Instant::now();
    let (preds, losses) = lms_run_rows(&norm, l_lms, eta_lms)?;
    let elapsed = start.elapsed().as_secs_f64();
    let steps = preds.len().max(1);
    let rows = preds
        .iter()
        .map(|r| invert_norm_row(r, stats))
        .collect();
    Ok(OnlinePrediction {
        first_frame: l_lms,
        rows,
        losses,
        mean_step_seconds: elapsed / steps as f64,
    })
}
