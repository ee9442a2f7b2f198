//! Run configuration: one JSON document wiring every stage of the
//! pipeline, so partial runs and grid searches share identical settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correspondence::WarpParams;
use crate::error::{Error, Result};
use crate::eval::PredictorConfigs;
use crate::optical_flow::{FlowGrid, FlowParams};
use crate::predictors::rnn::RnnGrid;
use crate::synthetic::{DriftSpec, NoiseSpec};
use crate::tracking::SplitSpec;

/// Phantom generation settings: a moving-blob base cycle extended into a
/// long drifting, noisy sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSection {
    pub dims: [usize; 3],
    /// Blob width per axis, voxels.
    pub blob_sigma: [f64; 3],
    pub blob_amplitude: f64,
    /// Peak z excursion of the blob over the base breathing cycle, voxels.
    pub cycle_amplitude: f64,
    pub drift: DriftSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            dims: [16, 16, 16],
            blob_sigma: [3.0, 3.0, 3.0],
            blob_amplitude: 1000.0,
            cycle_amplitude: 1.5,
            drift: DriftSpec {
                amplitude_a: 0.5,
                period_t: 600.0,
                sample_dt: 0.4,
                n_frames: 60,
            },
            noise: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for the data-parallel stages; library default if
    /// absent.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Pre-existing frame headers to use instead of synthesizing.
    #[serde(default)]
    pub input_frames: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub flow: FlowParams,
    /// Tracked points, voxel coordinates in the reference frame.
    pub markers: Vec<[f64; 3]>,
    pub split: SplitSpec,
    #[serde(default)]
    pub predictors: PredictorConfigs,
    #[serde(default = "default_n_rnn_runs")]
    pub n_rnn_runs: usize,
    #[serde(default)]
    pub warp: WarpParams,
    #[serde(default)]
    pub flow_grid: Option<FlowGrid>,
    #[serde(default)]
    pub rnn_grid: Option<RnnGrid>,
}

fn default_n_rnn_runs() -> usize {
    10
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.markers.is_empty() {
            return Err(Error::InvalidParam("at least one marker required".into()));
        }
        self.flow.validate()?;
        self.warp.validate()?;
        self.predictors.rnn.validate()?;
        self.synth.drift.validate()?;
        if let Some(n) = &self.synth.noise {
            n.validate()?;
        }
        if self.predictors.rnn.r != self.markers.len() {
            return Err(Error::InvalidParam(format!(
                "rnn config expects {} markers, config lists {}",
                self.predictors.rnn.r,
                self.markers.len()
            )));
        }
        if self.n_rnn_runs < 1 {
            return Err(Error::InvalidParam("n_rnn_runs must be >= 1".into()));
        }
        if let Some(frames) = &self.input_frames {
            if frames.len() < 2 {
                return Err(Error::InvalidParam(
                    "input_frames must list at least 2 volumes".into(),
                ));
            }
            for p in frames {
                if !p.exists() {
                    return Err(Error::InvalidParam(format!(
                        "input frame `{}` does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of frames in the sequence the pipeline will operate on.
    pub fn n_frames(&self) -> usize {
        self.input_frames
            .as_ref()
            .map(|f| f.len())
            .unwrap_or(self.synth.drift.n_frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        RunConfig {
            out_dir: PathBuf::from("/tmp/out"),
            seed: 0,
            threads: None,
            input_frames: None,
            synth: SynthSection::default(),
            flow: FlowParams::default(),
            markers: vec![[8.0, 8.0, 8.0]; 3],
            split: SplitSpec {
                n_train: 30,
                n_val: 10,
                n_test: 10,
            },
            predictors: PredictorConfigs::default(),
            n_rnn_runs: 2,
            warp: WarpParams::default(),
            flow_grid: None,
            rnn_grid: None,
        }
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = minimal();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.markers, cfg.markers);
        assert_eq!(back.n_frames(), 60);
    }

    #[test]
    fn marker_count_must_match_rnn_r() {
        let mut cfg = minimal();
        cfg.markers.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_input_frame_is_rejected() {
        let mut cfg = minimal();
        cfg.input_frames = Some(vec![
            PathBuf::from("/nonexistent/a.json"),
            PathBuf::from("/nonexistent/b.json"),
        ]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_fill_optional_sections() {
        let text = r#"{
            "out_dir": "/tmp/x",
            "markers": [[1,1,1],[2,2,2],[3,3,3]],
            "split": {"n_train": 30, "n_val": 10, "n_test": 10}
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_rnn_runs, 10);
        assert_eq!(cfg.warp.h, 3);
        assert!(cfg.flow_grid.is_none());
    }
}
