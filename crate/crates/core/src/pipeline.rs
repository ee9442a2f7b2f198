//! Pipeline orchestration: each stage reads its inputs from the run
//! directory and writes its artifacts back, so stages can be run
//! individually or chained end to end. A full run produces a manifest
//! listing every artifact with its content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::correspondence::{fit_correspondence, nw_forward_warp, reconstruct_dvf, CorrespondenceModel};
use crate::error::{Error, Result};
use crate::eval::{compare_predictors, cross_correlation, ComparisonTable};
use crate::io::{self, DType};
use crate::optical_flow::lk_register;
use crate::predictors::rnn::rnn_run_online;
use crate::predictors::OnlinePrediction;
use crate::synthetic::{extend_sequence, make_phantom, GaussianBlob};
use crate::tracking::{extract_trajectories, fit_norm, TrajectorySet};
use crate::volume::{VectorField3, Volume3};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestStage {
    pub name: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub stages: Vec<ManifestStage>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn frame_path(out: &Path, k: usize) -> PathBuf {
    out.join("frames").join(format!("frame_{k:04}.json"))
}

fn dvf_path(out: &Path, t: usize) -> PathBuf {
    out.join("dvfs").join(format!("dvf_{t:04}.json"))
}

/// Frames the pipeline operates on: the configured input volumes, or the
/// synthesized sequence from the run directory.
pub fn load_frames(cfg: &RunConfig) -> Result<Vec<Volume3>> {
    match &cfg.input_frames {
        Some(paths) => paths.iter().map(|p| io::load_volume(p)).collect(),
        None => (0..cfg.synth.drift.n_frames)
            .map(|k| io::load_volume(&frame_path(&cfg.out_dir, k)))
            .collect(),
    }
}

fn load_dvfs(cfg: &RunConfig) -> Result<Vec<VectorField3>> {
    (1..cfg.n_frames())
        .map(|t| io::load_field(&dvf_path(&cfg.out_dir, t)))
        .collect()
}

/// Synthesizes the phantom sequence: a 10-phase breathing cycle of a blob
/// oscillating along z, extended with drift and optional noise.
pub fn stage_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if cfg.input_frames.is_some() {
        return Ok(Vec::new());
    }
    let s = &cfg.synth;
    let mid = [
        (s.dims[0] - 1) as f64 / 2.0,
        (s.dims[1] - 1) as f64 / 2.0,
        (s.dims[2] - 1) as f64 / 2.0,
    ];
    let base: Vec<Volume3> = (0..10)
        .map(|k| {
            let phase = k as f64 / 10.0 * std::f64::consts::TAU;
            let blob = GaussianBlob {
                center: [mid[0], mid[1], mid[2] + s.cycle_amplitude * phase.sin()],
                sigma: s.blob_sigma,
                amplitude: s.blob_amplitude,
            };
            make_phantom(s.dims, &[blob])
        })
        .collect();
    let frames = extend_sequence(&base, &s.drift, s.noise.as_ref(), None)?;

    let dir = cfg.out_dir.join("frames");
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        let path = frame_path(&cfg.out_dir, k);
        io::save_volume(frame, &path, DType::F32)?;
        files.push(path.clone());
        files.push(path.with_extension("raw"));
    }
    Ok(files)
}

/// Registers every later frame against frame 0.
pub fn stage_register(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let frames = load_frames(cfg)?;
    if frames.len() < 2 {
        return Err(Error::InvalidParam("need at least 2 frames".into()));
    }
    let dir = cfg.out_dir.join("dvfs");
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for t in 1..frames.len() {
        let dvf = lk_register(&frames[0], &frames[t], &cfg.flow)?;
        let path = dvf_path(&cfg.out_dir, t);
        io::save_field(&dvf, frames[0].spacing(), &path)?;
        files.push(path.clone());
        for c in ["ux", "uy", "uz"] {
            files.push(dir.join(format!("dvf_{t:04}.{c}.raw")));
        }
    }
    Ok(files)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRecord {
    t_index: usize,
    marker: usize,
    axis: usize,
    displacement_mm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackMeta {
    points: Vec<[f64; 3]>,
    spacing: [f64; 3],
}

/// Samples the DVFs at the marker positions and writes the displacement
/// series.
pub fn stage_track(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let frames = load_frames(cfg)?;
    let dvfs = load_dvfs(cfg)?;
    let spacing = frames[0].spacing();
    let ts = extract_trajectories(&dvfs, &cfg.markers, spacing)?;

    let dir = cfg.out_dir.join("track");
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("trajectories.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for (t, row) in ts.series().iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            w.serialize(TrajectoryRecord {
                t_index: t,
                marker: c / 3,
                axis: c % 3,
                displacement_mm: v,
            })?;
        }
    }
    w.flush()?;
    let meta_path = dir.join("points.json");
    let meta = TrackMeta {
        points: cfg.markers.clone(),
        spacing,
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(vec![csv_path, meta_path])
}

/// Reads back the tracked series written by [`stage_track`].
pub fn load_trajectories(out_dir: &Path) -> Result<(TrajectorySet, [f64; 3])> {
    let dir = out_dir.join("track");
    let meta: TrackMeta = serde_json::from_str(&fs::read_to_string(dir.join("points.json"))?)?;
    let width = 3 * meta.points.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut r = csv::Reader::from_path(dir.join("trajectories.csv"))?;
    for rec in r.deserialize() {
        let rec: TrajectoryRecord = rec?;
        if rows.len() <= rec.t_index {
            rows.resize(rec.t_index + 1, vec![0.0; width]);
        }
        rows[rec.t_index][3 * rec.marker + rec.axis] = rec.displacement_mm;
    }
    let points = meta
        .points
        .iter()
        .map(|p| {
            [
                p[0] * meta.spacing[0],
                p[1] * meta.spacing[1],
                p[2] * meta.spacing[2],
            ]
        })
        .collect();
    Ok((TrajectorySet::new(points, rows)?, meta.spacing))
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    t_index: usize,
    marker: usize,
    axis: usize,
    y_pred_mm: f64,
    y_true_mm: f64,
}

/// Runs the RNN online over the tracked series and writes the predicted
/// rows next to the ground truth.
pub fn stage_predict(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (ts, _) = load_trajectories(&cfg.out_dir)?;
    let stats = fit_norm(&ts, &cfg.split)?;
    let pred = rnn_run_online(&ts, &stats, &cfg.predictors.rnn)?;

    let dir = cfg.out_dir.join("predict");
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for (k, row) in pred.rows.iter().enumerate() {
        let frame = pred.first_frame + k;
        for (c, &v) in row.iter().enumerate() {
            w.serialize(PredictionRecord {
                t_index: frame,
                marker: c / 3,
                axis: c % 3,
                y_pred_mm: v,
                y_true_mm: ts.series()[frame][c],
            })?;
        }
    }
    w.flush()?;
    Ok(vec![csv_path])
}

/// Reads back the predictions written by [`stage_predict`].
pub fn load_predictions(out_dir: &Path, width: usize) -> Result<OnlinePrediction> {
    let path = out_dir.join("predict").join("predictions.csv");
    let mut by_frame: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    let mut r = csv::Reader::from_path(&path)?;
    for rec in r.deserialize() {
        let rec: PredictionRecord = rec?;
        by_frame
            .entry(rec.t_index)
            .or_insert_with(|| vec![0.0; width])[3 * rec.marker + rec.axis] = rec.y_pred_mm;
    }
    let first_frame = *by_frame.keys().next().ok_or_else(|| {
        Error::InvalidParam("predictions.csv holds no rows".into())
    })?;
    let rows: Vec<Vec<f64>> = by_frame.into_values().collect();
    let n = rows.len();
    Ok(OnlinePrediction {
        first_frame,
        rows,
        losses: vec![0.0; n],
        mean_step_seconds: 0.0,
    })
}

/// Fits the correspondence model on the training split and warps the
/// reference frame by the DVF reconstructed from each predicted test row.
pub fn stage_warp(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let frames = load_frames(cfg)?;
    let dvfs = load_dvfs(cfg)?;
    let (ts, spacing) = load_trajectories(&cfg.out_dir)?;
    let pred = load_predictions(&cfg.out_dir, 3 * ts.n_markers())?;
    cfg.split.validate(ts.n_frames())?;

    let n_train = cfg.split.n_train;
    let train_rows: Vec<Vec<f64>> = ts.series()[..n_train].to_vec();
    let model = fit_correspondence(&dvfs[..n_train], &train_rows, spacing)?;

    let dir = cfg.out_dir.join("warp");
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let gamma_path = dir.join("gamma.json");
    io::save_coefficient_grids(model.gamma(), model.dims(), spacing, &gamma_path)?;
    files.push(gamma_path.clone());
    for p in 0..model.n_markers() {
        files.push(dir.join(format!("gamma.g{p}.raw")));
    }

    for f in cfg.split.test_range() {
        let row = pred.row_for_frame(f).ok_or_else(|| {
            Error::InvalidParam(format!("no prediction for series row {f}"))
        })?;
        let dvf = reconstruct_dvf(&model, row)?;
        let image = nw_forward_warp(&frames[0], &dvf, &cfg.warp)?;
        let path = dir.join(format!("pred_{f:04}.json"));
        io::save_volume(&image, &path, DType::F32)?;
        files.push(path.clone());
        files.push(path.with_extension("raw"));
    }
    Ok(files)
}

/// Loads a previously fitted correspondence model from the run directory.
pub fn load_correspondence(out_dir: &Path) -> Result<CorrespondenceModel> {
    let (grids, dims, spacing) =
        io::load_coefficient_grids(&out_dir.join("warp").join("gamma.json"))?;
    CorrespondenceModel::new(dims, spacing, grids, 0)
}

#[derive(Debug, Serialize)]
struct MetricsRecord<'a> {
    predictor: &'a str,
    e_max: Option<f64>,
    e_rms: Option<f64>,
    e_nrms: Option<f64>,
    jitter: Option<f64>,
    e_mae: Option<f64>,
    n_runs_used: Option<usize>,
    n_failed: usize,
}

/// Evaluates every predictor on the test split and, when predicted images
/// exist, the mean predicted-vs-true cross-correlation.
pub fn stage_evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (ts, _) = load_trajectories(&cfg.out_dir)?;
    let mut table = compare_predictors(&ts, &cfg.predictors, &cfg.split, cfg.n_rnn_runs)?;

    // mean cross-correlation over predicted test images, if the warp stage ran
    let warp_dir = cfg.out_dir.join("warp");
    if warp_dir.join("gamma.json").exists() {
        let frames = load_frames(cfg)?;
        let mut acc = 0.0;
        let mut n = 0usize;
        for f in cfg.split.test_range() {
            let path = warp_dir.join(format!("pred_{f:04}.json"));
            if !path.exists() {
                continue;
            }
            let predicted = io::load_volume(&path)?;
            // series row f describes frame f + 1
            acc += cross_correlation(&predicted, &frames[f + 1])?;
            n += 1;
        }
        if n > 0 {
            if let Some(row) = table.rows.iter_mut().find(|r| r.name == "rnn") {
                if let Some(report) = row.report.as_mut() {
                    report.cross_corr = Some(acc / n as f64);
                }
            }
        }
    }

    // strip wall-clock timings so repeated runs produce identical artifacts
    for row in &mut table.rows {
        row.mean_step_seconds = 0.0;
    }

    let dir = cfg.out_dir.join("evaluate");
    fs::create_dir_all(&dir)?;
    let json_path = dir.join("metrics.json");
    fs::write(&json_path, serde_json::to_string_pretty(&table)?)?;
    let csv_path = dir.join("metrics.csv");
    write_metrics_csv(&table, &csv_path)?;
    Ok(vec![json_path, csv_path])
}

pub fn write_metrics_csv(table: &ComparisonTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &table.rows {
        let r = row.report.as_ref();
        w.serialize(MetricsRecord {
            predictor: &row.name,
            e_max: r.map(|m| m.e_max),
            e_rms: r.map(|m| m.e_rms),
            e_nrms: r.map(|m| m.e_nrms),
            jitter: r.map(|m| m.jitter),
            e_mae: r.map(|m| m.e_mae),
            n_runs_used: r.map(|m| m.n_runs_used),
            n_failed: row.n_failed,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the full chain and writes `manifest.json` listing every artifact
/// with its SHA-256 digest. Deterministic given identical config and seed.
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    if let Some(n) = cfg.threads {
        // only the first initialization in a process can win; later calls
        // keep the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let stages: [(&str, fn(&RunConfig) -> Result<Vec<PathBuf>>); 6] = [
        ("synth", stage_synth),
        ("register", stage_register),
        ("track", stage_track),
        ("predict", stage_predict),
        ("warp", stage_warp),
        ("evaluate", stage_evaluate),
    ];
    let mut manifest_stages = Vec::with_capacity(stages.len());
    for (name, run) in stages {
        let files = run(cfg).map_err(|e| e.in_stage(name))?;
        let mut entries = Vec::with_capacity(files.len());
        for path in files {
            let rel = path
                .strip_prefix(&cfg.out_dir)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned();
            entries.push(ManifestEntry {
                path: rel,
                sha256: sha256_file(&path).map_err(|e| e.in_stage(name))?,
            });
        }
        manifest_stages.push(ManifestStage {
            name: name.to_string(),
            files: entries,
        });
    }

    let config_sha256 = format!(
        "{:x}",
        Sha256::digest(serde_json::to_string(cfg)?.as_bytes())
    );
    let manifest = Manifest {
        config_sha256,
        stages: manifest_stages,
    };
    fs::write(
        cfg.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}
