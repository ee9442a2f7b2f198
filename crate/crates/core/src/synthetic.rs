//! Synthetic data generation: extension of a short breathing cycle into a
//! long drifting, noisy sequence, plus analytic phantoms and marker
//! trajectories used as prediction fixtures.

use serde::{Deserialize, Serialize};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::tracking::TrajectorySet;
use crate::volume::{trilinear_sample, Volume3};

/// Sinusoidal z-drift added when extending a base cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftSpec {
    /// Drift amplitude in mm.
    pub amplitude_a: f64,
    /// Drift period in seconds.
    pub period_t: f64,
    /// Sampling interval in seconds.
    #[serde(default = "default_dt")]
    pub sample_dt: f64,
    /// Number of frames in the extended sequence.
    #[serde(default = "default_n_frames")]
    pub n_frames: usize,
}

fn default_dt() -> f64 {
    0.4
}

fn default_n_frames() -> usize {
    2400
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.amplitude_a < 0.0 {
            return Err(Error::InvalidParam("drift amplitude must be >= 0".into()));
        }
        if !(self.period_t > 0.0) {
            return Err(Error::InvalidParam("drift period must be > 0".into()));
        }
        if self.n_frames < 1 {
            return Err(Error::InvalidParam("n_frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// Additive Poisson intensity noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub seed: u64,
}

fn default_lambda() -> f64 {
    1000.0
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParam("noise lambda must be > 0".into()));
        }
        Ok(())
    }
}

/// Extends a 10-phase base cycle into `drift.n_frames` frames. Frame `k`
/// (1-based) cycles through the base images, is translated along z by
/// `A sin(2 pi t_k / T)` via trilinear resampling, then noised.
///
/// The optional `permutation` reorders the base cycle before extension;
/// identity when absent. Noise draws `n ~ Poisson(lambda)` per voxel and
/// adds `s (n - lambda)` with `s = range / lambda`, where `range` is the
/// intensity dynamic range of the base cycle; the result is clamped back
/// to that range. Each frame uses its own RNG stream so generation is
/// deterministic and order-independent.
pub fn extend_sequence(
    base: &[Volume3],
    drift: &DriftSpec,
    noise: Option<&NoiseSpec>,
    permutation: Option<&[usize]>,
) -> Result<Vec<Volume3>> {
    drift.validate()?;
    if let Some(n) = noise {
        n.validate()?;
    }
    if base.len() != 10 {
        return Err(Error::InvalidParam(format!(
            "base cycle must have exactly 10 volumes, got {}",
            base.len()
        )));
    }
    let dims = base[0].dims();
    if base.iter().any(|v| v.dims() != dims) {
        return Err(Error::DimMismatch("base volumes have differing dims".into()));
    }
    let order: Vec<usize> = match permutation {
        Some(p) => {
            let mut seen = [false; 10];
            if p.len() != 10 || p.iter().any(|&i| i >= 10 || std::mem::replace(&mut seen[i], true))
            {
                return Err(Error::InvalidParam(
                    "permutation must be a permutation of 0..10".into(),
                ));
            }
            p.to_vec()
        }
        None => (0..10).collect(),
    };

    let (lo, hi) = base.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, v| {
        let (l, h) = v.min_max();
        (acc.0.min(l), acc.1.max(h))
    });
    let range = hi - lo;

    let spacing = base[0].spacing();
    let mut frames = Vec::with_capacity(drift.n_frames);
    for k in 1..=drift.n_frames {
        let src = &base[order[(k - 1) % 10]];
        let t_k = k as f64 * drift.sample_dt;
        let shift_vox =
            drift.amplitude_a * (2.0 * std::f64::consts::PI * t_k / drift.period_t).sin()
                / spacing[2];
        let mut frame = if shift_vox == 0.0 {
            src.clone()
        } else {
            Volume3::from_fn(dims, spacing, |x, y, z| {
                trilinear_sample(src, [x as f64, y as f64, z as f64 + shift_vox])
            })
        };
        if let Some(n) = noise {
            if range > 0.0 {
                let scale = range / n.lambda;
                let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
                rng.set_stream(k as u64);
                let poisson = Poisson::new(n.lambda).expect("lambda > 0");
                for v in frame.data_mut() {
                    let draw: f64 = poisson.sample(&mut rng);
                    *v = (*v + scale * (draw - n.lambda)).clamp(lo, hi);
                }
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Anisotropic Gaussian blob, an analytic phantom building block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianBlob {
    pub center: [f64; 3],
    pub sigma: [f64; 3],
    pub amplitude: f64,
}

impl GaussianBlob {
    pub fn eval(&self, p: [f64; 3]) -> f64 {
        let mut e = 0.0;
        for c in 0..3 {
            let d = (p[c] - self.center[c]) / self.sigma[c];
            e += d * d;
        }
        self.amplitude * (-0.5 * e).exp()
    }
}

/// Sum-of-blobs phantom: smooth, analytic, translatable in closed form.
pub fn make_phantom(dims: [usize; 3], blobs: &[GaussianBlob]) -> Volume3 {
    Volume3::from_fn(dims, [1.0; 3], |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        blobs.iter().map(|b| b.eval(p)).sum()
    })
}

/// Per-marker sinusoidal motion for the synthetic trajectory fixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkerMotion {
    /// Sinusoid amplitude per axis, mm.
    pub amplitude_mm: [f64; 3],
    /// Sinusoid period per axis, seconds.
    pub period_s: [f64; 3],
    /// Phase offset per axis, radians.
    #[serde(default)]
    pub phase: [f64; 3],
}

/// Deterministic synthetic trajectories: per-axis cyclic sinusoid, plus the
/// slow z drift of `drift`, plus iid Gaussian noise of standard deviation
/// `noise_sigma` on every sample.
pub fn make_marker_series(
    n_frames: usize,
    markers: &[MarkerMotion],
    drift: &DriftSpec,
    noise_sigma: f64,
    seed: u64,
) -> Result<TrajectorySet> {
    drift.validate()?;
    if markers.is_empty() {
        return Err(Error::InvalidParam("at least one marker required".into()));
    }
    for m in markers {
        if m.amplitude_mm.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParam("non-finite marker amplitude".into()));
        }
        if m.period_s.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidParam("marker period must be > 0".into()));
        }
    }
    let r = markers.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut series = Vec::with_capacity(n_frames);
    for n in 1..=n_frames {
        let t = n as f64 * drift.sample_dt;
        let drift_z =
            drift.amplitude_a * (2.0 * std::f64::consts::PI * t / drift.period_t).sin();
        let mut row = Vec::with_capacity(3 * r);
        for m in markers {
            for d in 0..3 {
                let mut v = m.amplitude_mm[d]
                    * (2.0 * std::f64::consts::PI * t / m.period_s[d] + m.phase[d]).sin();
                if d == 2 {
                    v += drift_z;
                }
                if noise_sigma > 0.0 {
                    v += noise_sigma * normal.sample(&mut rng);
                }
                row.push(v);
            }
        }
        series.push(row);
    }
    let points = vec![[0.0; 3]; r];
    TrajectorySet::new(points, series)
}
