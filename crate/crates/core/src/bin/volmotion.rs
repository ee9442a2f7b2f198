//! Command-line driver: runs the full pipeline or individual stages from a
//! JSON run configuration.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use volmotion::config::RunConfig;
use volmotion::correspondence::nw_forward_warp;
use volmotion::error::Error;
use volmotion::io::{self, DType};
use volmotion::optical_flow::{flow_grid_search, lk_register};
use volmotion::pipeline::{self, load_frames, load_trajectories, run_pipeline};
use volmotion::predictors::rnn::rnn_grid_search;

#[derive(Parser)]
#[command(name = "volmotion", version, about = "Volumetric motion analysis and prediction")]
struct Cli {
    /// JSON run configuration.
    #[arg(short, long, global = true, default_value = "run.json")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic phantom sequence.
    Synth,
    /// Register every frame against frame 0.
    Register {
        /// Register one explicit pair instead of the whole sequence.
        #[arg(long, requires = "moving")]
        fixed: Option<PathBuf>,
        #[arg(long, requires = "fixed")]
        moving: Option<PathBuf>,
        /// Output field header for the explicit pair.
        #[arg(long, default_value = "dvf.json")]
        out: PathBuf,
    },
    /// Exhaustive flow-parameter search over the registered sequence.
    GridsearchFlow,
    /// Sample the displacement fields at the configured markers.
    Track,
    /// Predict the marker series online with the configured RNN.
    Predict,
    /// Exhaustive RNN hyperparameter search on the tracked series.
    GridsearchRnn,
    /// Warp a volume by a displacement field.
    Warp {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value = "warped.json")]
        out: PathBuf,
    },
    /// Reconstruct predicted images from the predicted marker rows.
    PredictImage,
    /// Compute the comparison metrics on the test split.
    Evaluate,
    /// Run every stage and write the artifact manifest.
    Pipeline,
}

fn load_config(path: &Path) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Ok(dir) = std::env::var("VOLMOTION_OUT_DIR") {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Ok(threads) = std::env::var("VOLMOTION_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| Error::InvalidParam(format!("bad VOLMOTION_THREADS `{threads}`")))?;
        cfg.threads = Some(n);
    }
    Ok(cfg)
}

fn init_threads(cfg: &RunConfig) {
    if let Some(n) = cfg.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn grid_points(markers: &[[f64; 3]]) -> Vec<[usize; 3]> {
    markers
        .iter()
        .map(|p| [p[0] as usize, p[1] as usize, p[2] as usize])
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            let files = pipeline::stage_synth(&cfg).map_err(|e| e.in_stage("synth"))?;
            println!("synth: wrote {} files", files.len());
        }
        Command::Register { fixed, moving, out } => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            if let (Some(f), Some(m)) = (fixed, moving) {
                let fixed = io::load_volume(&f)?;
                let moving = io::load_volume(&m)?;
                let dvf = lk_register(&fixed, &moving, &cfg.flow)?;
                io::save_field(&dvf, fixed.spacing(), &out)?;
                println!("register: wrote {}", out.display());
            } else {
                let files = pipeline::stage_register(&cfg).map_err(|e| e.in_stage("register"))?;
                println!("register: wrote {} files", files.len());
            }
        }
        Command::GridsearchFlow => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            let grid = cfg.flow_grid.clone().ok_or_else(|| {
                Error::InvalidParam("config has no `flow_grid` section".into())
            })?;
            let frames = load_frames(&cfg)?;
            let points = grid_points(&cfg.markers);
            let result = flow_grid_search(&frames, &grid, Some(&points))?;
            let dir = cfg.out_dir.join("gridsearch");
            std::fs::create_dir_all(&dir)?;
            let rows_path = dir.join("flow_grid.csv");
            let mut w = csv::Writer::from_path(&rows_path)?;
            for row in &result.rows {
                w.serialize(row)?;
            }
            w.flush()?;
            let marg_path = dir.join("flow_marginals.csv");
            let mut w = csv::Writer::from_path(&marg_path)?;
            for m in &result.marginals {
                w.serialize(m)?;
            }
            w.flush()?;
            std::fs::write(
                dir.join("flow_best.json"),
                serde_json::to_string_pretty(&result.rows[result.best])?,
            )?;
            println!(
                "gridsearch-flow: {} tuples, best e_dvf {:.6}",
                result.rows.len(),
                result.rows[result.best].e_dvf
            );
        }
        Command::Track => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            let files = pipeline::stage_track(&cfg).map_err(|e| e.in_stage("track"))?;
            println!("track: wrote {} files", files.len());
        }
        Command::Predict => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            let files = pipeline::stage_predict(&cfg).map_err(|e| e.in_stage("predict"))?;
            println!("predict: wrote {} files", files.len());
        }
        Command::GridsearchRnn => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            let grid = cfg.rnn_grid.clone().ok_or_else(|| {
                Error::InvalidParam("config has no `rnn_grid` section".into())
            })?;
            let (ts, _) = load_trajectories(&cfg.out_dir)?;
            let result = rnn_grid_search(&ts, &cfg.split, &grid)?;
            let dir = cfg.out_dir.join("gridsearch");
            std::fs::create_dir_all(&dir)?;
            let rows_path = dir.join("rnn_grid.csv");
            let mut w = csv::Writer::from_path(&rows_path)?;
            for row in &result.rows {
                w.serialize(row)?;
            }
            w.flush()?;
            let marg_path = dir.join("rnn_marginals.csv");
            let mut w = csv::Writer::from_path(&marg_path)?;
            for m in &result.marginals {
                w.serialize(m)?;
            }
            w.flush()?;
            match result.best {
                Some(best) => {
                    std::fs::write(
                        dir.join("rnn_best.json"),
                        serde_json::to_string_pretty(&result.rows[best])?,
                    )?;
                    println!(
                        "gridsearch-rnn: {} tuples, best validation MAE {:.6} mm",
                        result.rows.len(),
                        result.rows[best].mae_mm.unwrap_or(f64::NAN)
                    );
                }
                None => println!("gridsearch-rnn: every tuple failed"),
            }
        }
        Command::Warp { volume, field, out } => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            let vol = io::load_volume(&volume)?;
            let dvf = io::load_field(&field)?;
            let warped = nw_forward_warp(&vol, &dvf, &cfg.warp)?;
            io::save_volume(&warped, &out, DType::F32)?;
            println!("warp: wrote {}", out.display());
        }
        Command::PredictImage => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            let files = pipeline::stage_warp(&cfg).map_err(|e| e.in_stage("warp"))?;
            println!("predict-image: wrote {} files", files.len());
        }
        Command::Evaluate => {
            let cfg = load_config(&cli.config)?;
            init_threads(&cfg);
            let files = pipeline::stage_evaluate(&cfg).map_err(|e| e.in_stage("evaluate"))?;
            println!("evaluate: wrote {} files", files.len());
        }
        Command::Pipeline => {
            let cfg = load_config(&cli.config)?;
            let manifest = run_pipeline(&cfg)?;
            let n: usize = manifest.stages.iter().map(|s| s.files.len()).sum();
            println!(
                "pipeline: {} stages, {} artifacts, manifest at {}",
                manifest.stages.len(),
                n,
                cfg.out_dir.join("manifest.json").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
