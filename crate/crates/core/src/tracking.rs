//! Marker trajectory extraction from displacement fields, train/val/test
//! splitting, and normalization using training-set statistics only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{trilinear_sample_field, VectorField3};

/// Per-marker displacement time series. Row `n` of `series` holds the 3r
/// values `(ux(x_1), uy(x_1), uz(x_1), ..., uz(x_r))` in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    points: Vec<[f64; 3]>,
    series: Vec<Vec<f64>>,
}

impl TrajectorySet {
    pub fn new(points: Vec<[f64; 3]>, series: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParam("marker count must be >= 1".into()));
        }
        if series.is_empty() {
            return Err(Error::InvalidParam("series must have >= 1 row".into()));
        }
        let width = 3 * points.len();
        for (i, row) in series.iter().enumerate() {
            if row.len() != width {
                return Err(Error::DimMismatch(format!(
                    "row {i} has {} entries, expected {width}",
                    row.len()
                )));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParam(format!("non-finite value in row {i}")));
            }
        }
        Ok(Self { points, series })
    }

    pub fn n_markers(&self) -> usize {
        self.points.len()
    }

    pub fn n_frames(&self) -> usize {
        self.series.len()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn series(&self) -> &[Vec<f64>] {
        &self.series
    }

    /// 3D displacement of marker `p` at row `n`.
    pub fn displacement(&self, n: usize, p: usize) -> [f64; 3] {
        let row = &self.series[n];
        [row[3 * p], row[3 * p + 1], row[3 * p + 2]]
    }
}

/// Train / validation / test row counts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_train")]
    pub n_train: usize,
    #[serde(default = "default_val")]
    pub n_val: usize,
    #[serde(default = "default_test")]
    pub n_test: usize,
}

fn default_train() -> usize {
    2000
}

fn default_val() -> usize {
    200
}

fn default_test() -> usize {
    200
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 200,
            n_test: 200,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if self.n_train < 1 || self.n_val < 1 || self.n_test < 1 {
            return Err(Error::InvalidParam("each split must have >= 1 row".into()));
        }
        let total = self.n_train + self.n_val + self.n_test;
        if total > n_frames {
            return Err(Error::InvalidParam(format!(
                "split total {total} exceeds series length {n_frames}"
            )));
        }
        Ok(())
    }

    /// Row ranges: train `[0, n_train)`, validation, then test.
    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.n_train
    }

    pub fn val_range(&self) -> std::ops::Range<usize> {
        self.n_train..self.n_train + self.n_val
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.n_train + self.n_val..self.n_train + self.n_val + self.n_test
    }
}

/// Per-column z-scoring statistics, computed on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Samples each DVF at the marker positions (trilinear) and converts the
/// displacements to mm via the grid spacing.
pub fn extract_trajectories(
    dvfs: &[VectorField3],
    points: &[[f64; 3]],
    spacing: [f64; 3],
) -> Result<TrajectorySet> {
    if dvfs.is_empty() {
        return Err(Error::InvalidParam("no displacement fields".into()));
    }
    let dims = dvfs[0].dims();
    for p in points {
        if (0..3).any(|c| p[c] < 0.0 || p[c] > (dims[c] - 1) as f64) {
            return Err(Error::OutOfGrid(*p));
        }
    }
    let mut series = Vec::with_capacity(dvfs.len());
    for dvf in dvfs {
        if dvf.dims() != dims {
            return Err(Error::DimMismatch("DVF dims differ across frames".into()));
        }
        let mut row = Vec::with_capacity(3 * points.len());
        for p in points {
            let u = trilinear_sample_field(dvf, *p);
            for c in 0..3 {
                row.push(u[c] * spacing[c]);
            }
        }
        series.push(row);
    }
    TrajectorySet::new(points.to_vec(), series)
}

/// Column means and standard deviations over the training rows only.
pub fn fit_norm(ts: &TrajectorySet, split: &SplitSpec) -> Result<NormStats> {
    split.validate(ts.n_frames())?;
    if split.n_train < 2 {
        return Err(Error::InvalidParam("n_train must be >= 2 to fit stats".into()));
    }
    let width = 3 * ts.n_markers();
    let rows = &ts.series()[split.train_range()];
    let n = rows.len() as f64;
    let mut mu = vec![0.0; width];
    for row in rows {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut var = vec![0.0; width];
    for row in rows {
        for c in 0..width {
            let d = row[c] - mu[c];
            var[c] += d * d;
        }
    }
    let mut sigma = Vec::with_capacity(width);
    for (c, v) in var.iter().enumerate() {
        let s = (v / n).sqrt();
        if s == 0.0 {
            return Err(Error::ZeroVariance { column: c });
        }
        sigma.push(s);
    }
    Ok(NormStats { mu, sigma })
}

/// Z-scores every row of `series` by the training statistics.
pub fn apply_norm(series: &[Vec<f64>], stats: &NormStats) -> Vec<Vec<f64>> {
    series
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - stats.mu[c]) / stats.sigma[c])
                .collect()
        })
        .collect()
}

pub fn invert_norm(series: &[Vec<f64>], stats: &NormStats) -> Vec<Vec<f64>> {
    series
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, v)| v * stats.sigma[c] + stats.mu[c])
                .collect()
        })
        .collect()
}

pub fn invert_norm_row(row: &[f64], stats: &NormStats) -> Vec<f64> {
    row.iter()
        .enumerate()
        .map(|(c, v)| v * stats.sigma[c] + stats.mu[c])
        .collect()
}

/// Motion amplitude per marker: the maximum pairwise Euclidean distance
/// between the marker's 3D displacements over the whole series.
pub fn motion_amplitude(ts: &TrajectorySet) -> Vec<f64> {
    let n = ts.n_frames();
    (0..ts.n_markers())
        .map(|p| {
            let pts: Vec<[f64; 3]> = (0..n).map(|k| ts.displacement(k, p)).collect();
            let mut best = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    let d: f64 = (0..3).map(|c| (pts[i][c] - pts[j][c]).powi(2)).sum();
                    best = best.max(d);
                }
            }
            best.sqrt()
        })
        .collect()
}
