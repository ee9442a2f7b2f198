//! Online multi-marker position prediction: an RNN trained by RTRL with
//! joint gradient clipping, an LMS filter, an offline linear predictor, and
//! the no-prediction baseline.
//!
//! All predictors share the same input convention: the input vector for
//! step `n` is `[1, row_n, row_{n+1}, ..., row_{n+L-1}]` (each row holding
//! the 3r normalized displacement components, marker-major), and the target
//! is `row_{n+L}`. The look-ahead is therefore one sampling interval.

pub mod linear;
pub mod lms;
pub mod rnn;

pub use linear::{linear_predict, LinearModel};
pub use lms::{lms_run, LmsState};
pub use rnn::{
    clip_joint_gradient, rnn_grid_search, rnn_init, rnn_run_online, rnn_step, JointGradient,
    RnnConfig, RnnGrid, RnnGridResult, RnnGridRow, RnnRtrlState,
};

use crate::error::{Error, Result};
use crate::tracking::TrajectorySet;

/// Input vector for step `n`: bias 1 followed by rows `n..n+l` flattened.
pub fn build_input(rows: &[Vec<f64>], n: usize, l: usize) -> Vec<f64> {
    let width = rows[0].len();
    let mut u = Vec::with_capacity(1 + l * width);
    u.push(1.0);
    for row in &rows[n..n + l] {
        u.extend_from_slice(row);
    }
    u
}

/// Number of (input, target) pairs available in an `n_frames`-row series.
pub fn pair_count(n_frames: usize, l: usize) -> Result<usize> {
    if n_frames < l + 1 {
        return Err(Error::InvalidParam(format!(
            "series of {n_frames} rows is too short for history length {l}"
        )));
    }
    Ok(n_frames - l)
}

/// Output of an online prediction run. `rows[k]` is the predicted
/// displacement row (mm) for frame `first_frame + k`; predictions exist for
/// every frame from `first_frame` to the end of the series.
#[derive(Debug, Clone)]
pub struct OnlinePrediction {
    pub first_frame: usize,
    pub rows: Vec<Vec<f64>>,
    /// Instantaneous loss `E_n = 0.5 ||d_n - y_n||^2` per step, in the
    /// predictor's working units (normalized for RNN/LMS, mm otherwise).
    pub losses: Vec<f64>,
    /// Mean wall-clock seconds per update+predict step (excludes I/O).
    pub mean_step_seconds: f64,
}

impl OnlinePrediction {
    /// Predicted row for an absolute frame index, if one exists.
    pub fn row_for_frame(&self, frame: usize) -> Option<&[f64]> {
        frame
            .checked_sub(self.first_frame)
            .and_then(|k| self.rows.get(k))
            .map(|r| r.as_slice())
    }
}

/// Baseline without prediction: the estimate for frame `n+1` is the
/// observation at frame `n`.
pub fn no_prediction(ts: &TrajectorySet) -> OnlinePrediction {
    let start = std::time::Instant::now();
    let rows: Vec<Vec<f64>> = ts.series()[..ts.n_frames() - 1].to_vec();
    let losses = rows
        .iter()
        .zip(&ts.series()[1..])
        .map(|(pred, truth)| {
            0.5 * pred
                .iter()
                .zip(truth)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .collect();
    let steps = rows.len().max(1);
    OnlinePrediction {
        first_frame: 1,
        rows,
        losses,
        mean_step_seconds: start.elapsed().as_secs_f64() / steps as f64,
    }
}
