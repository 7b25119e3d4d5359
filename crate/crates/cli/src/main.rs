use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use gaitcontour::contour_pose::UNIFORM_BASELINE_POINTS;
use gaitcontour::io::write_json;
use gaitcontour_cli::commands::{self, EvalOutputs, RUN_CONFIG};
use gaitcontour_cli::ExperimentConfig;

const LONG_VERSION: &str = if cfg!(debug_assertions) {
    concat!(env!("CARGO_PKG_VERSION"), " (debug build)")
} else {
    concat!(env!("CARGO_PKG_VERSION"), " (release build)")
};

#[derive(Parser)]
#[command(name = "gaitcontour", version, long_version = LONG_VERSION, about = "Contour-Pose gait recognition pipelines")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, help_heading = "Global options")]
    jobs: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, help_heading = "Global options", action = ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true, help_heading = "Global options")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic walker dataset (masks + pose JSON per sequence).
    Synth {
        #[arg(long, default_value_t = 8)]
        ids: usize,
        #[arg(long, default_value_t = 4)]
        seqs: usize,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build .cpz sequences from mask directories and pose files.
    Extract {
        /// A sequence directory of masks, or a dataset of sequence directories.
        #[arg(long)]
        masks: PathBuf,
        /// Pose file of a single sequence (default: <masks>/pose.json).
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Output .cpz file (single sequence) or directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        min_points: Option<usize>,
        /// Uniform 112-point contour ring instead of Contour-Pose.
        #[arg(long)]
        uniform112: bool,
        /// Shuffle contour points within each keypoint group.
        #[arg(long)]
        no_order: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a directory of .cpz sequences.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training sequences (default: data.train of the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Receives model.gct, loss.csv and config.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Seeds initialization, batch sampling and augmentation.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        clip_frames: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Disable noise and flip augmentation.
        #[arg(long)]
        no_augment: bool,
    },
    /// Rank retrieval and TAR@FAR of a checkpoint on gallery/probe sequences.
    Eval {
        /// Default: config.json next to the checkpoint, if present.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gallery: Option<PathBuf>,
        #[arg(long)]
        probe: Option<PathBuf>,
        /// Report JSON path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Probe x gallery score CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// ROC curve SVG.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Attention multiply-accumulates of Local-CPT against full attention.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = gaitcontour::contour_pose::CONTOUR_POSE_POINTS)]
        points: usize,
        /// JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn required(flag: Option<PathBuf>, fallback: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.cloned())
        .with_context(|| format!("no {name} directory: pass --{name} or set data.{name} in the config"))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            ids,
            seqs,
            frames,
            out,
            seed,
        } => {
            commands::synth(&out, ids, seqs, frames, seed)?;
        }
        Command::Extract {
            masks,
            poses,
            out,
            config,
            min_points,
            uniform112,
            no_order,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            if let Some(n) = min_points {
                cfg.approx.min_points = n;
            }
            if uniform112 {
                cfg.extract.uniform_points = Some(UNIFORM_BASELINE_POINTS);
            }
            if no_order {
                cfg.extract.shuffle = true;
            }
            if let Some(s) = seed {
                cfg.extract.seed = s;
            }
            cfg.validate()?;
            commands::extract(&masks, poses.as_deref(), &out, &cfg)?;
        }
        Command::Train {
            config,
            data,
            out,
            steps,
            seed,
            clip_frames,
            lr,
            no_augment,
        } => {
            let mut cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            if let Some(s) = steps {
                cfg.triplet.steps = s;
            }
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            if let Some(c) = clip_frames {
                cfg.triplet.clip_frames = c;
            }
            if let Some(lr) = lr {
                cfg.triplet.lr = lr;
            }
            if no_augment {
                cfg.augment = gaitcontour::features::AugmentConfig::disabled();
            }
            let data = required(data, cfg.data.train.as_ref(), "data")?;
            cfg.data.train = Some(data.clone());
            cfg.validate()?;
            commands::train(&cfg, &data, &out)?;
        }
        Command::Eval {
            config,
            checkpoint,
            gallery,
            probe,
            out,
            scores,
            plot,
        } => {
            let beside = checkpoint.parent().map(|d| d.join(RUN_CONFIG)).filter(|p| p.is_file());
            let cfg = ExperimentConfig::load_or_default(config.as_deref().or(beside.as_deref()))?;
            let gallery = required(gallery, cfg.data.gallery.as_ref(), "gallery")?;
            let probe = required(probe, cfg.data.probe.as_ref(), "probe")?;
            let outputs = EvalOutputs {
                scores: scores.as_deref(),
                plot: plot.as_deref(),
            };
            let report = commands::eval(&cfg, &checkpoint, &gallery, &probe, &outputs)?;
            emit_json(out.as_deref(), &report)?;
        }
        Command::Flops { config, points, json } => {
            let cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            let report = commands::flops(&cfg, points)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.table(&cfg));
            }
        }
    }
    Ok(())
}

fn emit_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => write_json(p, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
