//! `wardsense` — pipeline CLI over the bedside sensor-analytics engine.
//!
//! Every subcommand reads a patient data tree (or explicit input files),
//! writes its artifacts atomically under `--out`, and seals the run with a
//! `manifest.json` recording artifact digests, input digests, and the
//! configuration hash. Exit codes: 0 success, 2 configuration, 3 input
//! data, 4 internal.

mod artifacts;
mod commands;
mod config;
mod data;
mod failure;

use clap::{Parser, Subcommand};
use failure::Failure;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "wardsense", version, about, propagate_version = true)]
struct Cli {
    /// Configuration file: `key = value` lines under `[sections]`.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for artifacts and the run manifest.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for simulation and train/test splitting.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Fail on malformed input rows instead of skipping them.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads (default: logical CPU count).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse every input stream and summarize record counts per patient.
    Ingest { data_dir: Option<PathBuf> },
    /// Rest-activity features per patient-day plus group activity curves.
    Actigraphy { data_dir: Option<PathBuf> },
    /// Expression frequencies and detection success rates per patient.
    Facs { data_dir: Option<PathBuf> },
    /// Train a posture classifier on labeled keypoint frames.
    PostureTrain { data_dir: Option<PathBuf> },
    /// Evaluate a saved posture model against labeled frames.
    PostureEval {
        data_dir: Option<PathBuf>,
        /// Saved model produced by posture-train.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Classify every keypoint frame with a saved model.
    PosturePredict {
        data_dir: Option<PathBuf>,
        /// Saved model produced by posture-train.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Detector quality: per-class average precision after optional NMS.
    Deteval {
        /// Detections CSV: class,frame,x,y,w,h,score.
        #[arg(long, value_name = "CSV")]
        detections: PathBuf,
        /// Ground-truth CSV: class,frame,x,y,w,h.
        #[arg(long, value_name = "CSV")]
        truths: PathBuf,
    },
    /// Sound and light summaries per patient-day with night-noise limits.
    Env { data_dir: Option<PathBuf> },
    /// Visitation disruption rates by day/night segment.
    Visitation { data_dir: Option<PathBuf> },
    /// Two-cohort comparison over movement and visitation variables.
    Compare { data_dir: Option<PathBuf> },
    /// Generate a deterministic synthetic cohort data tree under --out.
    Simulate,
    /// Bundle upstream artifacts into plot-ready series plus a JSON index.
    Report {
        /// Directory holding the upstream artifacts to bundle.
        artifact_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = config::resolve(
        cli.config.as_deref(),
        cli.out.as_deref(),
        cli.seed,
        cli.strict,
        cli.jobs,
    )?;

    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| Failure::internal(format!("cannot size the worker pool: {e}")))?;
    }

    let config_digest = match &cli.config {
        Some(path) => Some(artifacts::digest_file(path)?),
        None => None,
    };
    let seal = |mut set: artifacts::ArtifactSet, subcommand: &str| -> Result<(), Failure> {
        if let (Some(digest), Some(path)) = (&config_digest, &cli.config) {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "config".to_string());
            set.record_input(format!("config:{name}"), digest.clone());
        }
        let count = set.artifact_count();
        let out = set.out_dir().display().to_string();
        set.finish(subcommand, &cfg.semantic_hash())?;
        println!("{subcommand}: wrote {count} artifact(s) to {out}");
        Ok(())
    };

    match cli.command {
        Command::Ingest { data_dir } => {
            let set = commands::ingest::run(&cfg, cfg.data_dir(data_dir)?)?;
            seal(set, "ingest")
        }
        Command::Actigraphy { data_dir } => {
            let set = commands::actigraphy::run(&cfg, cfg.data_dir(data_dir)?)?;
            seal(set, "actigraphy")
        }
        Command::Facs { data_dir } => {
            let set = commands::facs::run(&cfg, cfg.data_dir(data_dir)?)?;
            seal(set, "facs")
        }
        Command::PostureTrain { data_dir } => {
            let set = commands::posture::train(&cfg, cfg.data_dir(data_dir)?)?;
            seal(set, "posture-train")
        }
        Command::PostureEval { data_dir, model } => {
            let model = cfg.model_file(model)?;
            let set = commands::posture::eval(&cfg, cfg.data_dir(data_dir)?, &model)?;
            seal(set, "posture-eval")
        }
        Command::PosturePredict { data_dir, model } => {
            let model = cfg.model_file(model)?;
            let set = commands::posture::predict(&cfg, cfg.data_dir(data_dir)?, &model)?;
            seal(set, "posture-predict")
        }
        Command::Deteval { detections, truths } => {
            let set = commands::deteval::run(&cfg, detections, truths)?;
            seal(set, "deteval")
        }
        Command::Env { data_dir } => {
            let set = commands::environment::env(&cfg, cfg.data_dir(data_dir)?)?;
            seal(set, "env")
        }
        Command::Visitation { data_dir } => {
            let set = commands::environment::visitation(&cfg, cfg.data_dir(data_dir)?)?;
            seal(set, "visitation")
        }
        Command::Compare { data_dir } => {
            let set = commands::compare::run(&cfg, cfg.data_dir(data_dir)?)?;
            seal(set, "compare")
        }
        Command::Simulate => {
            let set = commands::simulate::run(&cfg)?;
            seal(set, "simulate")
        }
        Command::Report { artifact_dir } => {
            let set = commands::report::run(&cfg, artifact_dir)?;
            seal(set, "report")
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprint!("wardsense: {failure}");
            failure.exit_code()
        }
    }
}
