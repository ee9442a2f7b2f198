//! Quantitative evaluation: prediction error metrics, jitter, confidence
//! intervals over repeated runs, image cross-correlation, and the
//! predictor comparison table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictors::rnn::{rnn_run_online, RnnConfig};
use crate::predictors::{linear_predict, lms_run, no_prediction, OnlinePrediction};
use crate::tracking::{fit_norm, SplitSpec, TrajectorySet};
use crate::volume::Volume3;

/// A 95% mean confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Test-split metrics of one predictor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub e_max: f64,
    pub e_rms: f64,
    pub e_nrms: f64,
    pub jitter: f64,
    pub e_mae: f64,
    pub ci_max: Option<Interval>,
    pub ci_rms: Option<Interval>,
    pub n_runs_used: usize,
    pub cross_corr: Option<f64>,
}

/// Per-marker Euclidean error for each frame; both series are 3r-wide rows.
fn euclidean_errors(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::DimMismatch(format!(
            "{} true rows vs {} predicted rows",
            truth.len(),
            pred.len()
        )));
    }
    let width = truth[0].len();
    if width == 0 || width % 3 != 0 {
        return Err(Error::DimMismatch("rows must be 3r wide".into()));
    }
    truth
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            if t.len() != width || p.len() != width {
                return Err(Error::DimMismatch("ragged series".into()));
            }
            Ok((0..width / 3)
                .map(|m| {
                    let dx = t[3 * m] - p[3 * m];
                    let dy = t[3 * m + 1] - p[3 * m + 1];
                    let dz = t[3 * m + 2] - p[3 * m + 2];
                    (dx * dx + dy * dy + dz * dz).sqrt()
                })
                .collect())
        })
        .collect()
}

/// Mean Euclidean prediction error over frames and markers.
pub fn mae(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    let errs = euclidean_errors(truth, pred)?;
    let n = errs.len() * errs[0].len();
    Ok(errs.iter().flatten().sum::<f64>() / n as f64)
}

/// Largest Euclidean error over frames and markers.
pub fn max_error(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    let errs = euclidean_errors(truth, pred)?;
    Ok(errs.iter().flatten().fold(0.0f64, |a, &b| a.max(b)))
}

/// Root mean square of the Euclidean errors.
pub fn rmse(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    let errs = euclidean_errors(truth, pred)?;
    let n = errs.len() * errs[0].len();
    Ok((errs.iter().flatten().map(|e| e * e).sum::<f64>() / n as f64).sqrt())
}

/// RMSE normalized by the energy of the centered true signal: the error
/// energy divided by the spread of each marker around its mean position on
/// the evaluated frames.
pub fn nrmse(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    let errs = euclidean_errors(truth, pred)?;
    let width = truth[0].len();
    let n_frames = truth.len();
    let mut mu = vec![0.0f64; width];
    for row in truth {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= n_frames as f64;
    }
    let denom: f64 = truth
        .iter()
        .map(|row| {
            row.iter()
                .zip(&mu)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum();
    if denom <= 0.0 {
        return Err(Error::DegenerateSignal(
            "true series is constant; normalized RMSE is undefined".into(),
        ));
    }
    let num: f64 = errs.iter().flatten().map(|e| e * e).sum();
    Ok((num / denom).sqrt())
}

/// Mean Euclidean length of consecutive prediction steps; zero for a
/// constant prediction, large for an oscillatory one.
pub fn jitter(pred: &[Vec<f64>]) -> Result<f64> {
    if pred.len() < 2 {
        return Err(Error::InvalidParam(
            "jitter needs at least two frames".into(),
        ));
    }
    let steps = euclidean_errors(&pred[1..].to_vec(), &pred[..pred.len() - 1].to_vec())?;
    let n = steps.len() * steps[0].len();
    Ok(steps.iter().flatten().sum::<f64>() / n as f64)
}

/// 95% mean confidence interval over run-level values: point estimate
/// ± 1.96 s / sqrt(n0), with s the sample standard deviation (n−1) and n0
/// the number of successful runs.
pub fn confidence_interval(values: &[f64]) -> Result<Interval> {
    let n0 = values.len();
    if n0 < 2 {
        return Err(Error::InvalidParam(format!(
            "confidence interval needs at least 2 runs, got {n0}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n0 as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n0 - 1) as f64;
    let half = 1.96 * var.sqrt() / (n0 as f64).sqrt();
    Ok(Interval {
        point: mean,
        lo: mean - half,
        hi: mean + half,
    })
}

/// Pearson correlation of the flattened intensities of two images.
pub fn cross_correlation(i: &Volume3, j: &Volume3) -> Result<f64> {
    if i.dims() != j.dims() {
        return Err(Error::DimMismatch(format!(
            "image dims {:?} != {:?}",
            i.dims(),
            j.dims()
        )));
    }
    let n = i.len() as f64;
    let mi = i.data().iter().sum::<f64>() / n;
    let mj = j.data().iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vi = 0.0;
    let mut vj = 0.0;
    for (&a, &b) in i.data().iter().zip(j.data()) {
        cov += (a - mi) * (b - mj);
        vi += (a - mi) * (a - mi);
        vj += (b - mj) * (b - mj);
    }
    if vi <= 0.0 || vj <= 0.0 {
        return Err(Error::DegenerateSignal(
            "constant image has zero intensity variance".into(),
        ));
    }
    Ok(cov / (vi.sqrt() * vj.sqrt()))
}

/// True/predicted rows aligned over a frame range.
fn aligned(
    ts: &TrajectorySet,
    pred: &OnlinePrediction,
    range: std::ops::Range<usize>,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut truth = Vec::with_capacity(range.len());
    let mut rows = Vec::with_capacity(range.len());
    for frame in range {
        let row = pred.row_for_frame(frame).ok_or_else(|| {
            Error::InvalidParam(format!("no prediction for frame {frame}"))
        })?;
        truth.push(ts.series()[frame].clone());
        rows.push(row.to_vec());
    }
    Ok((truth, rows))
}

/// Metrics of one prediction run on a frame range.
pub fn evaluate_prediction(
    ts: &TrajectorySet,
    pred: &OnlinePrediction,
    range: std::ops::Range<usize>,
) -> Result<MetricsReport> {
    let (truth, rows) = aligned(ts, pred, range)?;
    Ok(MetricsReport {
        e_max: max_error(&truth, &rows)?,
        e_rms: rmse(&truth, &rows)?,
        e_nrms: nrmse(&truth, &rows)?,
        jitter: jitter(&rows)?,
        e_mae: mae(&truth, &rows)?,
        ci_max: None,
        ci_rms: None,
        n_runs_used: 1,
        cross_corr: None,
    })
}

/// Predictor settings used by the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorConfigs {
    pub rnn: RnnConfig,
    pub l_lms: usize,
    pub eta_lms: f64,
    pub l_lin: usize,
}

impl Default for PredictorConfigs {
    fn default() -> Self {
        Self {
            rnn: RnnConfig::default(),
            l_lms: 10,
            eta_lms: 0.01,
            l_lin: 10,
        }
    }
}

/// One row of the comparison table. `report` is `None` when every run of
/// the predictor failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorRow {
    pub name: String,
    pub report: Option<MetricsReport>,
    pub mean_step_seconds: f64,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<PredictorRow>,
}

impl ComparisonTable {
    pub fn row(&self, name: &str) -> Option<&PredictorRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Runs the RNN (over `n_runs` seeds), the linear predictor, LMS, and the
/// no-prediction baseline on the same series and reports test-split metrics
/// for each. RNN metrics are averaged over the non-failed runs with
/// confidence intervals on e_max and e_rms.
pub fn compare_predictors(
    ts: &TrajectorySet,
    configs: &PredictorConfigs,
    split: &SplitSpec,
    n_runs: usize,
) -> Result<ComparisonTable> {
    if n_runs < 1 {
        return Err(Error::InvalidParam("n_runs must be >= 1".into()));
    }
    split.validate(ts.n_frames())?;
    let stats = fit_norm(ts, split)?;
    let range = split.test_range();
    let mut rows = Vec::with_capacity(4);

    // RNN over seeds
    let mut reports = Vec::new();
    let mut step_time = 0.0;
    let mut n_failed = 0usize;
    for run in 0..n_runs {
        let cfg = RnnConfig {
            seed: configs.rnn.seed + run as u64,
            ..configs.rnn.clone()
        };
        match rnn_run_online(ts, &stats, &cfg) {
            Ok(pred) => {
                step_time += pred.mean_step_seconds;
                reports.push(evaluate_prediction(ts, &pred, range.clone())?);
            }
            Err(Error::NumericalFailure { .. }) => n_failed += 1,
            Err(e) => return Err(e),
        }
    }
    let rnn_report = if reports.is_empty() {
        None
    } else {
        let n0 = reports.len();
        let avg = |f: fn(&MetricsReport) -> f64| {
            reports.iter().map(f).sum::<f64>() / n0 as f64
        };
        let maxes: Vec<f64> = reports.iter().map(|r| r.e_max).collect();
        let rmses: Vec<f64> = reports.iter().map(|r| r.e_rms).collect();
        Some(MetricsReport {
            e_max: avg(|r| r.e_max),
            e_rms: avg(|r| r.e_rms),
            e_nrms: avg(|r| r.e_nrms),
            jitter: avg(|r| r.jitter),
            e_mae: avg(|r| r.e_mae),
            ci_max: confidence_interval(&maxes).ok(),
            ci_rms: confidence_interval(&rmses).ok(),
            n_runs_used: n0,
            cross_corr: None,
        })
    };
    let n_ok = (n_runs - n_failed).max(1);
    rows.push(PredictorRow {
        name: "rnn".into(),
        report: rnn_report,
        mean_step_seconds: step_time / n_ok as f64,
        n_failed,
    });

    let (_, lin) = linear_predict(ts, configs.l_lin, split)?;
    rows.push(PredictorRow {
        name: "linear".into(),
        report: Some(evaluate_prediction(ts, &lin, range.clone())?),
        mean_step_seconds: lin.mean_step_seconds,
        n_failed: 0,
    });

    let lms = lms_run(ts, &stats, configs.l_lms, configs.eta_lms)?;
    rows.push(PredictorRow {
        name: "lms".into(),
        report: Some(evaluate_prediction(ts, &lms, range.clone())?),
        mean_step_seconds: lms.mean_step_seconds,
        n_failed: 0,
    });

    let base = no_prediction(ts);
    rows.push(PredictorRow {
        name: "no_prediction".into(),
        report: Some(evaluate_prediction(ts, &base, range)?),
        mean_step_seconds: base.mean_step_seconds,
        n_failed: 0,
    });

    Ok(ComparisonTable { rows })
}
