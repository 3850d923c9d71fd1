use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sslcal::config::{parse_roi, PipelineConfig};
use sslcal::error::{Error, Result};
use sslcal::pipeline::{cmd_calibrate, cmd_evaluate, cmd_simulate, cmd_sweep, SweepAxis};

#[derive(Parser)]
#[command(name = "sslcal", version, about = "LiDAR-camera extrinsic calibration from checkerboards")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        placements: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Estimate the extrinsic from a dataset directory.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Box corners "x0,y0,z0,x1,y1,z1" in the LiDAR frame; skips segmentation.
        #[arg(long)]
        roi: Option<String>,
        /// Read image corners from placement_<id>/corners2d.txt.
        #[arg(long)]
        corners2d_external: bool,
    },
    /// Score a calibration record and write overlays.
    Evaluate {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Accuracy against the number of placements or frames.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        corners2d_external: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Placements,
    Frames,
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(match cli.command {
        Command::Simulate {
            config,
            output,
            seed,
            placements,
            frames,
        } => {
            let mut cfg = load_config(config.as_ref(), seed)?;
            if let Some(n) = placements {
                cfg.simulation.n_placements = n;
            }
            if let Some(t) = frames {
                cfg.simulation.frames = t;
            }
            serde_json::to_value(cmd_simulate(&cfg, &output)?).unwrap_or_default()
        }
        Command::Calibrate {
            config,
            dataset,
            output,
            seed,
            roi,
            corners2d_external,
        } => {
            let mut cfg = load_config(config.as_ref(), seed)?;
            if let Some(r) = roi {
                cfg.roi = Some(parse_roi(&r)?);
            }
            let rec = cmd_calibrate(&cfg, &dataset, &output, corners2d_external)?;
            serde_json::json!({
                "output": output,
                "extrinsic": rec.extrinsic,
                "placements": rec.placements.len(),
                "skipped": rec.skipped.len(),
                "ground_truth_error": rec.ground_truth_error,
            })
        }
        Command::Evaluate {
            record,
            dataset,
            output,
        } => {
            let r = cmd_evaluate(&record, &dataset, &output)?;
            serde_json::json!({
                "output": output,
                "nre_total": r.nre_total,
                "mean_weighted_error": r.mean_weighted_error,
                "fraction_below": r.fraction_below,
            })
        }
        Command::Sweep {
            config,
            dataset,
            output,
            axis,
            values,
            seed,
            corners2d_external,
        } => {
            let cfg = load_config(config.as_ref(), seed)?;
            let axis = match axis {
                Axis::Placements => SweepAxis::Placements,
                Axis::Frames => SweepAxis::Frames,
            };
            let rows = cmd_sweep(&cfg, &dataset, axis, values.as_deref(), &output, corners2d_external)?;
            serde_json::json!({ "output": output, "rows": rows.len() })
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.kind(), "message": e.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}
