//! Pipeline stages. Each reads declared inputs from the output directory and
//! writes declared outputs through the workspace staging area.

use std::fs;
use std::io::Write;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use eaq::config::{Algorithm, PipelineConfig};
use eaq::diffusion::{train, DiffusionModel};
use eaq::episode::{downsample_dataset, read_episodes, tensorize, write_episodes, DatasetMeta, EpisodeFile};
use eaq::marl::{
    cooperation_metric, coverage_statistic, evaluate, generate_offline_dataset, train_offline, OfflineLearner,
};
use eaq::rad::{rad_upsample, RadMode};
use eaq::sampler::synthesize;
use eaq::{seed, Episode, Source};
use serde_json::json;

use crate::workspace::{Stage, Workspace};

pub const FULL: &str = "data/full.jsonl";
pub const ORIGINAL: &str = "data/original.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Augmenter {
    Eaq,
    EaqNoq,
    RadS,
    RadM,
    None,
}

impl Augmenter {
    pub fn as_str(self) -> &'static str {
        match self {
            Augmenter::Eaq => "eaq",
            Augmenter::EaqNoq => "eaq-noq",
            Augmenter::RadS => "rad-s",
            Augmenter::RadM => "rad-m",
            Augmenter::None => "none",
        }
    }

    /// Hinge weight for the diffusion-based augmenters.
    pub fn lambda(self, config: &PipelineConfig) -> Option<f64> {
        match self {
            Augmenter::Eaq => Some(config.diffusion.lambda),
            Augmenter::EaqNoq => Some(0.0),
            _ => None,
        }
    }

    /// Dataset the learner trains on.
    pub fn dataset(self) -> String {
        match self {
            Augmenter::None => ORIGINAL.to_string(),
            other => format!("data/augmented-{}.jsonl", other.as_str()),
        }
    }
}

pub fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Cql => "cql",
        Algorithm::Bcq => "bcq",
    }
}

fn diffusion_path(lambda: f64) -> String {
    format!("models/diffusion-lambda-{lambda}.ckpt")
}

fn diffusion_log_path(lambda: f64) -> String {
    format!("logs/diffusion-lambda-{lambda}.csv")
}

fn synthetic_path(lambda: f64) -> String {
    format!("data/synthetic-lambda-{lambda}.jsonl")
}

fn learner_path(algo: Algorithm, aug: Augmenter) -> String {
    format!("models/{}-{}.ckpt", algorithm_name(algo), aug.as_str())
}

pub fn eval_path(algo: Algorithm, aug: Augmenter) -> String {
    format!("reports/eval-{}-{}.csv", algorithm_name(algo), aug.as_str())
}

pub fn metrics_path(aug: Augmenter) -> String {
    format!("reports/metrics-{}.json", aug.as_str())
}

fn meta(config: &PipelineConfig) -> DatasetMeta {
    let env = &config.env;
    DatasetMeta::new(env.obs_dim(), env.num_actions(), env.episode_limit, config.dataset.gamma)
}

fn save_episodes(path: &std::path::Path, config: &PipelineConfig, episodes: Vec<Episode>) -> Result<()> {
    write_episodes(path, &EpisodeFile::new(meta(config), episodes))
        .with_context(|| format!("writing {}", path.display()))
}

fn load_episodes(ws: &Workspace, rel: &str, config: &PipelineConfig) -> Result<Vec<Episode>> {
    let file = read_episodes(ws.path(rel)).with_context(|| format!("reading {rel}"))?;
    let m = file.require_meta()?;
    let want = meta(config);
    if (m.d_obs, m.num_actions, m.t_max) != (want.d_obs, want.num_actions, want.t_max) {
        bail!(
            "{rel} was written for d_obs={}, |A|={}, T_max={} but the config implies {}, {}, {}",
            m.d_obs,
            m.num_actions,
            m.t_max,
            want.d_obs,
            want.num_actions,
            want.t_max
        );
    }
    Ok(file.episodes)
}

fn stage_seed(config: &PipelineConfig, label: &str) -> u64 {
    seed::derive_seed(config.seed, label)
}

pub fn gen_data(ws: &mut Workspace, config: &PipelineConfig) -> Result<bool> {
    let s = stage_seed(config, "gen-data");
    let d = &config.dataset;
    let stage = Stage {
        key: "gen-data".into(),
        command: "gen-data",
        seed: s,
        params: json!({
            "env": config.env,
            "policy": d.policy,
            "num_episodes": d.num_episodes,
            "gamma": d.gamma,
        }),
        inputs: vec![],
        outputs: vec![FULL.into()],
    };
    ws.run(stage, |st| {
        let eps = generate_offline_dataset(&config.env, d.policy, d.num_episodes, d.gamma, s)?;
        save_episodes(&st.path(FULL), config, eps)
    })
}

pub fn downsample(ws: &mut Workspace, config: &PipelineConfig) -> Result<bool> {
    let s = stage_seed(config, "downsample");
    let stage = Stage {
        key: "downsample".into(),
        command: "downsample",
        seed: s,
        params: json!({ "fraction": config.dataset.fraction }),
        inputs: vec![FULL.into()],
        outputs: vec![ORIGINAL.into()],
    };
    let full = load_episodes(ws, FULL, config)?;
    ws.run(stage, |st| {
        let kept = downsample_dataset(&full, config.dataset.fraction, s)?;
        save_episodes(&st.path(ORIGINAL), config, kept)
    })
}

pub fn train_diffusion(ws: &mut Workspace, config: &PipelineConfig, lambda: f64) -> Result<bool> {
    let s = stage_seed(config, "train-diffusion");
    let mut cfg = config.clone();
    cfg.diffusion.lambda = lambda;
    let train_cfg = cfg.train_config(s);
    let (ckpt, log) = (diffusion_path(lambda), diffusion_log_path(lambda));
    let stage = Stage {
        key: format!("train-diffusion/lambda={lambda}"),
        command: "train-diffusion",
        seed: s,
        params: serde_json::to_value(&train_cfg)?,
        inputs: vec![ORIGINAL.into()],
        outputs: vec![ckpt.clone(), log.clone()],
    };
    let original = load_episodes(ws, ORIGINAL, config)?;
    ws.run(stage, |st| {
        let ds = tensorize(&original, &config.env.layout()?)?;
        let (model, training_log) = train(&ds, &train_cfg)?;
        model.save(st.path(&ckpt))?;
        training_log.write_csv(st.path(&log))?;
        Ok(())
    })
}

pub fn sample(ws: &mut Workspace, config: &PipelineConfig, lambda: f64) -> Result<bool> {
    let s = stage_seed(config, "sample");
    let (ckpt, out) = (diffusion_path(lambda), synthetic_path(lambda));
    let original = load_episodes(ws, ORIGINAL, config)?;
    let count = config.sampler.scale * original.len();
    let stage = Stage {
        key: format!("sample/lambda={lambda}"),
        command: "sample",
        seed: s,
        params: json!({ "lambda": lambda, "scale": config.sampler.scale, "count": count }),
        inputs: vec![ORIGINAL.into(), ckpt.clone()],
        outputs: vec![out.clone()],
    };
    let ckpt_path = ws.path(&ckpt);
    ws.run(stage, |st| {
        let model = DiffusionModel::load(&ckpt_path).with_context(|| format!("loading {ckpt}"))?;
        let synthetic = synthesize(&model, count, s)?;
        save_episodes(&st.path(&out), config, synthetic)
    })
}

/// Merge the original set with the synthetic episodes of one hinge weight.
pub fn augment(ws: &mut Workspace, config: &PipelineConfig, aug: Augmenter) -> Result<bool> {
    let Some(lambda) = aug.lambda(config) else {
        bail!("augment takes --augmenter eaq or eaq-noq; use `rad` for {}", aug.as_str());
    };
    let (syn, out) = (synthetic_path(lambda), aug.dataset());
    let stage = Stage {
        key: format!("augment/{}", aug.as_str()),
        command: "augment",
        seed: 0,
        params: json!({ "augmenter": aug.as_str(), "lambda": lambda }),
        inputs: vec![ORIGINAL.into(), syn.clone()],
        outputs: vec![out.clone()],
    };
    let original = load_episodes(ws, ORIGINAL, config)?;
    let synthetic = load_episodes(ws, &syn, config)?;
    ws.run(stage, |st| {
        let mut merged: Vec<Episode> = original.into_iter().map(|e| e.with_source(Source::Real)).collect();
        merged.extend(synthetic.into_iter().map(|e| e.with_source(Source::Synthetic)));
        save_episodes(&st.path(&out), config, merged)
    })
}

pub fn rad(ws: &mut Workspace, config: &PipelineConfig, aug: Augmenter) -> Result<bool> {
    let mode = match aug {
        Augmenter::RadS => RadMode::Single,
        Augmenter::RadM => RadMode::Multi,
        other => bail!("rad takes --augmenter rad-s or rad-m, not {}", other.as_str()),
    };
    let s = stage_seed(config, aug.as_str());
    let rad_cfg = config.rad_config(mode, s);
    let out = aug.dataset();
    let stage = Stage {
        key: format!("rad/{}", aug.as_str()),
        command: "rad",
        seed: s,
        params: json!({ "rad": rad_cfg, "scale": config.sampler.scale }),
        inputs: vec![ORIGINAL.into()],
        outputs: vec![out.clone()],
    };
    let original = load_episodes(ws, ORIGINAL, config)?;
    ws.run(stage, |st| {
        let merged = rad_upsample(&original, &rad_cfg, config.sampler.scale)?;
        save_episodes(&st.path(&out), config, merged)
    })
}

pub fn train_marl(ws: &mut Workspace, config: &PipelineConfig, aug: Augmenter) -> Result<bool> {
    let s = stage_seed(config, "train-marl");
    let algo = config.learner.algorithm;
    let (data, out) = (aug.dataset(), learner_path(algo, aug));
    let learner_cfg = config.learner_config();
    let stage = Stage {
        key: format!("train-marl/{}/{}", algorithm_name(algo), aug.as_str()),
        command: "train-marl",
        seed: s,
        params: json!({
            "env": config.env,
            "learner": learner_cfg,
            "iterations": config.learner.iterations,
        }),
        inputs: vec![data.clone()],
        outputs: vec![out.clone()],
    };
    let episodes = load_episodes(ws, &data, config)?;
    ws.run(stage, |st| {
        let (learner, _) = train_offline(&learner_cfg, &config.env, &episodes, config.learner.iterations, s)?;
        learner.save(st.path(&out))?;
        Ok(())
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Evaluate the trained learner and write one CSV row.
///
/// `cooperation_fraction` and `coverage` describe the dataset the learner was
/// trained on; coverage is measured against the original set.
pub fn eval(ws: &mut Workspace, config: &PipelineConfig, aug: Augmenter) -> Result<bool> {
    let s = stage_seed(config, "eval");
    let algo = config.learner.algorithm;
    let (data, model, out) = (aug.dataset(), learner_path(algo, aug), eval_path(algo, aug));
    let stage = Stage {
        key: format!("eval/{}/{}", algorithm_name(algo), aug.as_str()),
        command: "eval",
        seed: s,
        params: json!({ "scenario": config.scenario, "episodes": config.eval.episodes, "env": config.env }),
        inputs: vec![ORIGINAL.into(), data.clone(), model.clone()],
        outputs: vec![out.clone()],
    };
    let original = load_episodes(ws, ORIGINAL, config)?;
    let train_set = load_episodes(ws, &data, config)?;
    let model_path = ws.path(&model);
    ws.run(stage, |st| {
        let mut learner = OfflineLearner::load(&model_path).with_context(|| format!("loading {model}"))?;
        let report = evaluate(&mut learner, &config.env, config.eval.episodes, s)?;
        let coop = cooperation_metric(&train_set, &config.env);
        let coverage = coverage_statistic(&original, &train_set)?;
        let mut f = fs::File::create(st.path(&out))?;
        writeln!(f, "scenario,augmentation,seed,mean_return,std,cooperation_fraction,coverage")?;
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            config.scenario,
            aug.as_str(),
            config.seed,
            report.mean_return,
            report.std_return,
            fmt_opt(coop),
            coverage
        )?;
        Ok(())
    })
}

/// Dataset statistics of the training set for one augmenter.
pub fn metrics(ws: &mut Workspace, config: &PipelineConfig, aug: Augmenter) -> Result<bool> {
    let (data, out) = (aug.dataset(), metrics_path(aug));
    let stage = Stage {
        key: format!("metrics/{}", aug.as_str()),
        command: "metrics",
        seed: 0,
        params: json!({ "env": config.env }),
        inputs: vec![ORIGINAL.into(), data.clone()],
        outputs: vec![out.clone()],
    };
    let original = load_episodes(ws, ORIGINAL, config)?;
    let episodes = load_episodes(ws, &data, config)?;
    ws.run(stage, |st| {
        let synthetic: Vec<Episode> = episodes
            .iter()
            .filter(|e| e.source.is_some_and(|s| s != Source::Real))
            .cloned()
            .collect();
        let mean = |eps: &[Episode]| {
            (!eps.is_empty()).then(|| eps.iter().map(Episode::total_return).sum::<f64>() / eps.len() as f64)
        };
        let report = json!({
            "augmentation": aug.as_str(),
            "episodes": episodes.len(),
            "real_episodes": episodes.len() - synthetic.len(),
            "synthetic_episodes": synthetic.len(),
            "mean_return": mean(&episodes),
            "synthetic_mean_return": mean(&synthetic),
            "cooperation_original": cooperation_metric(&original, &config.env),
            "cooperation": cooperation_metric(&episodes, &config.env),
            "cooperation_synthetic": cooperation_metric(&synthetic, &config.env),
            "coverage": coverage_statistic(&original, &episodes)?,
        });
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(st.path(&out), text)?;
        Ok(())
    })
}

/// Every stage needed to evaluate one augmenter, in order.
pub fn run_all(ws: &mut Workspace, config: &PipelineConfig, aug: Augmenter) -> Result<()> {
    gen_data(ws, config)?;
    downsample(ws, config)?;
    match aug {
        Augmenter::Eaq | Augmenter::EaqNoq => {
            let lambda = aug.lambda(config).expect("diffusion augmenter");
            train_diffusion(ws, config, lambda)?;
            sample(ws, config, lambda)?;
            augment(ws, config, aug)?;
        }
        Augmenter::RadS | Augmenter::RadM => {
            rad(ws, config, aug)?;
        }
        Augmenter::None => {}
    }
    train_marl(ws, config, aug)?;
    eval(ws, config, aug)?;
    metrics(ws, config, aug)?;
    Ok(())
}
