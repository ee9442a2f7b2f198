//! End-to-end checks of the command-line driver: full pipeline run,
//! stage subcommands against the produced artifacts, and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_volmotion"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("run");
    let cfg = serde_json::json!({
        "out_dir": out,
        "seed": 0,
        "synth": {
            "dims": [16, 16, 16],
            "blob_sigma": [2.5, 2.5, 2.5],
            "blob_amplitude": 1000.0,
            "cycle_amplitude": 1.5,
            "drift": {
                "amplitude_a": 0.4,
                "period_t": 20.0,
                "sample_dt": 0.4,
                "n_frames": 41
            }
        },
        "flow": {
            "sigma_init": 0.5,
            "sigma_sub": 0.8,
            "sigma_lk": 2.0,
            "n_layers": 2,
            "n_iter": 2,
            "lk_window_h": 3,
            "tensor_epsilon": 1e-6
        },
        "markers": [[7.5, 7.5, 7.5], [7.5, 7.5, 9.5], [9.5, 7.5, 7.5]],
        "split": { "n_train": 24, "n_val": 8, "n_test": 8 },
        "predictors": {
            "rnn": {
                "l": 5,
                "r": 3,
                "q": 10,
                "eta": 0.02,
                "theta": 1.0,
                "sigma_init_rnn": 0.02,
                "seed": 0
            },
            "l_lms": 5,
            "eta_lms": 0.01,
            "l_lin": 5
        },
        "n_rnn_runs": 2,
        "flow_grid": {
            "sigma_init": [0.5],
            "sigma_sub": [0.8],
            "sigma_lk": [2.0],
            "n_layers": [2],
            "n_iter": [2],
            "lk_window_h": 3,
            "tensor_epsilon": 1e-6
        },
        "rnn_grid": {
            "theta": [1.0],
            "eta": [0.02],
            "sigma_init_rnn": [0.02],
            "l": [5],
            "q": [10],
            "n_runs": 2,
            "seed": 0
        }
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn pipeline_and_stage_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");

    let status = bin().args(["--config"]).arg(&cfg).arg("pipeline").status().unwrap();
    assert!(status.success(), "pipeline run failed");
    assert!(out.join("manifest.json").is_file());
    assert!(out.join("evaluate").join("metrics.json").is_file());
    assert!(out.join("evaluate").join("metrics.csv").is_file());

    // pair-mode registration against artifacts the pipeline produced
    let dvf = dir.path().join("pair_dvf.json");
    let status = bin()
        .args(["--config"])
        .arg(&cfg)
        .arg("register")
        .arg("--fixed")
        .arg(out.join("frames").join("frame_0000.json"))
        .arg("--moving")
        .arg(out.join("frames").join("frame_0001.json"))
        .arg("--out")
        .arg(&dvf)
        .status()
        .unwrap();
    assert!(status.success(), "pair registration failed");
    assert!(dvf.is_file());

    // standalone warp with the field just produced
    let warped = dir.path().join("warped.json");
    let status = bin()
        .args(["--config"])
        .arg(&cfg)
        .arg("warp")
        .arg("--volume")
        .arg(out.join("frames").join("frame_0000.json"))
        .arg("--field")
        .arg(&dvf)
        .arg("--out")
        .arg(&warped)
        .status()
        .unwrap();
    assert!(status.success(), "warp failed");
    assert!(warped.is_file());

    // grid searches over the registered run
    let status = bin().args(["--config"]).arg(&cfg).arg("gridsearch-flow").status().unwrap();
    assert!(status.success(), "flow grid search failed");
    assert!(out.join("gridsearch").join("flow_grid.csv").is_file());
    assert!(out.join("gridsearch").join("flow_best.json").is_file());

    let status = bin().args(["--config"]).arg(&cfg).arg("gridsearch-rnn").status().unwrap();
    assert!(status.success(), "rnn grid search failed");
    assert!(out.join("gridsearch").join("rnn_grid.csv").is_file());
    assert!(out.join("gridsearch").join("rnn_best.json").is_file());
}

#[test]
fn bad_config_exits_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    // marker count disagrees with the rnn width
    std::fs::write(
        &path,
        r#"{
            "out_dir": "/tmp/never",
            "markers": [[1,1,1]],
            "split": {"n_train": 30, "n_val": 10, "n_test": 10}
        }"#,
    )
    .unwrap();
    let status = bin().args(["--config"]).arg(&path).arg("synth").status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn missing_artifacts_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    // evaluate before anything was produced: the stage fails on I/O
    let status = bin().args(["--config"]).arg(&cfg).arg("evaluate").status().unwrap();
    assert_eq!(status.code(), Some(3));
}
