//! `eaq`: run the augmentation experiment one stage at a time or end to end.

mod manifest;
mod stages;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use eaq::config::{Algorithm, PipelineConfig};
use eaq::marl::BehaviorQuality;

use stages::Augmenter;
use workspace::Workspace;

#[derive(Parser)]
#[command(name = "eaq", version, about = "Q-total guided trajectory diffusion augmentation for offline MARL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; stage seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory holding data, models, reports and the manifest.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Re-run stages even when the manifest says they are complete.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone, Default)]
struct DataArgs {
    /// Behavior policy quality (dataset.policy).
    #[arg(long, value_parser = parse_policy)]
    policy: Option<BehaviorQuality>,
    /// Share of episodes kept as the original set (dataset.fraction).
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct DiffusionArgs {
    /// Q-total hinge weight (diffusion.lambda).
    #[arg(long)]
    lambda: Option<f64>,
    /// Synthetic episodes per real episode (sampler.scale).
    #[arg(long)]
    scale: Option<usize>,
}

#[derive(Args, Clone)]
struct AugArgs {
    #[arg(long, value_enum, default_value = "eaq")]
    augmenter: Augmenter,
}

#[derive(Args, Clone, Default)]
struct LearnerArgs {
    /// Offline learner (learner.algorithm).
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the behavior policy to build the full offline dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Keep a random fraction of the full dataset as the original set.
    Downsample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit the trajectory denoiser on the original set.
    TrainDiffusion {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        diffusion: DiffusionArgs,
    },
    /// Draw scale x |original| synthetic episodes from a trained denoiser.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        diffusion: DiffusionArgs,
    },
    /// Merge the original set with synthetic episodes (eaq or eaq-noq).
    Augment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        diffusion: DiffusionArgs,
        #[command(flatten)]
        aug: AugArgs,
    },
    /// Random amplitude scaling baselines (rad-s or rad-m).
    Rad {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "rad-s")]
        augmenter: Augmenter,
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Train an offline learner on the dataset of one augmenter.
    TrainMarl {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        aug: AugArgs,
        #[command(flatten)]
        learner: LearnerArgs,
    },
    /// Evaluate a trained learner and write its CSV row.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        aug: AugArgs,
        #[command(flatten)]
        learner: LearnerArgs,
    },
    /// Cooperation and coverage statistics of one augmenter's dataset.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        aug: AugArgs,
    },
    /// Every stage for one scenario, quality and augmenter.
    RunAll {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        diffusion: DiffusionArgs,
        #[command(flatten)]
        aug: AugArgs,
        #[command(flatten)]
        learner: LearnerArgs,
    },
}

fn parse_policy(s: &str) -> Result<BehaviorQuality, String> {
    s.parse().map_err(|e: eaq::Error| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    match s {
        "cql" => Ok(Algorithm::Cql),
        "bcq" => Ok(Algorithm::Bcq),
        other => Err(format!("unknown algorithm {other:?}, expected cql or bcq")),
    }
}

#[derive(Default)]
struct Overrides {
    data: DataArgs,
    diffusion: DiffusionArgs,
    learner: LearnerArgs,
}

fn load_config(common: &Common, o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = o.data.policy {
        cfg.dataset.policy = p;
    }
    if let Some(f) = o.data.fraction {
        cfg.dataset.fraction = f;
    }
    if let Some(l) = o.diffusion.lambda {
        cfg.diffusion.lambda = l;
    }
    if let Some(s) = o.diffusion.scale {
        cfg.sampler.scale = s;
    }
    if let Some(a) = o.learner.algorithm {
        cfg.learner.algorithm = a;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (common, overrides) = match &cli.command {
        Command::GenData { common, data } | Command::Downsample { common, data } => (
            common,
            Overrides {
                data: data.clone(),
                ..Default::default()
            },
        ),
        Command::TrainDiffusion { common, diffusion }
        | Command::Sample { common, diffusion }
        | Command::Augment { common, diffusion, .. } => (
            common,
            Overrides {
                diffusion: diffusion.clone(),
                ..Default::default()
            },
        ),
        Command::Rad { common, scale, .. } => (
            common,
            Overrides {
                diffusion: DiffusionArgs {
                    lambda: None,
                    scale: *scale,
                },
                ..Default::default()
            },
        ),
        Command::TrainMarl { common, learner, .. } | Command::Eval { common, learner, .. } => (
            common,
            Overrides {
                learner: learner.clone(),
                ..Default::default()
            },
        ),
        Command::Metrics { common, .. } => (common, Overrides::default()),
        Command::RunAll {
            common,
            data,
            diffusion,
            learner,
            ..
        } => (
            common,
            Overrides {
                data: data.clone(),
                diffusion: diffusion.clone(),
                learner: learner.clone(),
            },
        ),
    };
    let config = load_config(common, &overrides)?;
    let mut ws = Workspace::open(&common.out, &config.to_toml_string(), config.seed, common.force)?;

    match cli.command {
        Command::GenData { .. } => {
            stages::gen_data(&mut ws, &config)?;
        }
        Command::Downsample { .. } => {
            stages::downsample(&mut ws, &config)?;
        }
        Command::TrainDiffusion { .. } => {
            stages::train_diffusion(&mut ws, &config, config.diffusion.lambda)?;
        }
        Command::Sample { .. } => {
            stages::sample(&mut ws, &config, config.diffusion.lambda)?;
        }
        Command::Augment { aug, .. } => {
            stages::augment(&mut ws, &config, aug.augmenter)?;
        }
        Command::Rad { augmenter, .. } => {
            stages::rad(&mut ws, &config, augmenter)?;
        }
        Command::TrainMarl { aug, .. } => {
            stages::train_marl(&mut ws, &config, aug.augmenter)?;
        }
        Command::Eval { aug, .. } => {
            stages::eval(&mut ws, &config, aug.augmenter)?;
        }
        Command::Metrics { aug, .. } => {
            stages::metrics(&mut ws, &config, aug.augmenter)?;
        }
        Command::RunAll { aug, .. } => {
            stages::run_all(&mut ws, &config, aug.augmenter)?;
        }
    }
    ws.finish()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
