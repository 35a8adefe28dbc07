//! Sectioned `key = value` run configuration.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment            (also after a value: `key = 1  # note`)
//! [section]            one of scenario, train, loss, codec, ablation
//! key = value          keys are section-local; values are trimmed
//! ```
//!
//! Keys may appear in any order; later assignments win. Unknown sections or
//! keys are errors. Booleans are `true`/`false`, lists are comma separated.

use std::fmt::Write as _;
use std::str::FromStr;

use wavecomm::distillation::{AdvRealSource, FuseKind, PercepScope};
use wavecomm::simharness::{CollabMode, ExperimentConfig, Suite};
use wavecomm::wirecodec::{BudgetPolicy, WireDtype};

use crate::error::{CliError, CliResult};

pub const SECTIONS: [&str; 5] = ["scenario", "train", "loss", "codec", "ablation"];

/// Everything a command can be configured with.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub suite: Suite,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { experiment: ExperimentConfig::default(), suite: Suite::Reconstruction, seeds: vec![1, 2, 3, 4, 5] }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|_| CliError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!("invalid value {value:?} for {key}: expected true or false"))),
    }
}

fn parse_with<T>(key: &str, value: &str, f: impl FnOnce(&str) -> wavecomm::Result<T>) -> CliResult<T> {
    f(value).map_err(|e| CliError::Config(format!("{key}: {e}")))
}

fn policy_name(p: BudgetPolicy) -> &'static str {
    match p {
        BudgetPolicy::Reject => "reject",
        BudgetPolicy::DropAgent => "drop_agent",
    }
}

fn parse_policy(key: &str, value: &str) -> CliResult<BudgetPolicy> {
    match value {
        "reject" => Ok(BudgetPolicy::Reject),
        "drop_agent" => Ok(BudgetPolicy::DropAgent),
        _ => Err(CliError::Config(format!("invalid value {value:?} for {key}: expected reject or drop_agent"))),
    }
}

fn scope_name(s: PercepScope) -> &'static str {
    match s {
        PercepScope::Whole => "whole",
        PercepScope::PerChannel => "per_channel",
    }
}

fn parse_scope(key: &str, value: &str) -> CliResult<PercepScope> {
    match value {
        "whole" => Ok(PercepScope::Whole),
        "per_channel" => Ok(PercepScope::PerChannel),
        _ => Err(CliError::Config(format!("invalid value {value:?} for {key}: expected whole or per_channel"))),
    }
}

pub fn parse_seeds(value: &str) -> CliResult<Vec<u64>> {
    let seeds = value
        .split(',')
        .map(|s| parse::<u64>("seeds", s.trim()))
        .collect::<CliResult<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(CliError::Config("seeds must not be empty".into()));
    }
    Ok(seeds)
}

impl RunConfig {
    /// Assigns one key. `key` is `section.name`.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let e = &mut self.experiment;
        let (sc, m, d, t) = (&mut e.scenario, &mut e.model, &mut e.distill, &mut e.train);
        match key {
            "scenario.world_h" => sc.world_h = parse(key, value)?,
            "scenario.world_w" => sc.world_w = parse(key, value)?,
            "scenario.n_agents" => sc.n_agents = parse(key, value)?,
            "scenario.n_objects" => sc.n_objects = parse(key, value)?,
            "scenario.obj_min" => sc.obj_min = parse(key, value)?,
            "scenario.obj_max" => sc.obj_max = parse(key, value)?,
            "scenario.radius" => sc.radius = parse(key, value)?,
            "scenario.occlusion" => sc.occlusion = parse_bool(key, value)?,
            "scenario.min_gap" => sc.min_gap = parse(key, value)?,
            "scenario.seed" => sc.seed = parse(key, value)?,
            "train.mode" => m.mode = parse_with(key, value, CollabMode::from_str)?,
            "train.fuse" => m.fuse = parse_with(key, value, FuseKind::from_str)?,
            "train.channels" => m.channels = parse(key, value)?,
            "train.gen_width" => m.gen_width = parse(key, value)?,
            "train.disc_width" => m.disc_width = parse(key, value)?,
            "train.head_hidden" => m.head_hidden = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.train_frames" => t.train_frames = parse(key, value)?,
            "train.eval_frames" => t.eval_frames = parse(key, value)?,
            "train.lr" => t.step.lr = parse(key, value)?,
            "train.lr_g" => d.lr_g = parse(key, value)?,
            "train.lr_d" => d.lr_d = parse(key, value)?,
            "train.pos_weight" => t.step.pos_weight = parse(key, value)?,
            "train.freeze_generator_task_grad" => t.step.freeze_generator_task_grad = parse_bool(key, value)?,
            "loss.lambda_recon" => d.weights.lambda_recon = parse(key, value)?,
            "loss.lambda_adv" => d.weights.lambda_adv = parse(key, value)?,
            "loss.alpha" => d.weights.alpha = parse(key, value)?,
            "loss.beta" => d.weights.beta = parse(key, value)?,
            "loss.gamma" => d.weights.gamma = parse(key, value)?,
            "loss.percep_scope" => d.percep_scope = parse_scope(key, value)?,
            "loss.adv_real" => d.adv_real = parse_with(key, value, AdvRealSource::from_str)?,
            "loss.ssim_window" => d.ssim.window = parse(key, value)?,
            "loss.ssim_sigma" => d.ssim.sigma = parse(key, value)?,
            "loss.ssim_k1" => d.ssim.k1 = parse(key, value)?,
            "loss.ssim_k2" => d.ssim.k2 = parse(key, value)?,
            "loss.ssim_range" => {
                d.ssim.dynamic_range = if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "codec.levels" => m.levels = parse(key, value)?,
            "codec.dtype" => m.dtype = parse_with(key, value, WireDtype::from_str)?,
            "codec.budget_policy" => e.policy = parse_policy(key, value)?,
            "ablation.suite" => self.suite = parse_with(key, value, Suite::from_str)?,
            "ablation.seeds" => self.seeds = parse_seeds(value)?,
            _ => return Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a document on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> CliResult<()> {
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::Config(format!("line {}: {msg}", i + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = Some(SECTIONS.iter().find(|s| **s == name).unwrap());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(at(format!("expected key = value, got {line:?}")));
            };
            let Some(sec) = section else {
                return Err(at("key outside of a section".into()));
            };
            self.set(&format!("{sec}.{}", key.trim()), value.trim()).map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    /// Every key with its current value, grouped by section.
    pub fn entries(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let e = &self.experiment;
        let (sc, m, d, t) = (&e.scenario, &e.model, &e.distill, &e.train);
        let w = &d.weights;
        vec![
            (
                "scenario",
                vec![
                    ("world_h", sc.world_h.to_string()),
                    ("world_w", sc.world_w.to_string()),
                    ("n_agents", sc.n_agents.to_string()),
                    ("n_objects", sc.n_objects.to_string()),
                    ("obj_min", sc.obj_min.to_string()),
                    ("obj_max", sc.obj_max.to_string()),
                    ("radius", sc.radius.to_string()),
                    ("occlusion", sc.occlusion.to_string()),
                    ("min_gap", sc.min_gap.to_string()),
                    ("seed", sc.seed.to_string()),
                ],
            ),
            (
                "train",
                vec![
                    ("mode", m.mode.to_string()),
                    ("fuse", m.fuse.to_string()),
                    ("channels", m.channels.to_string()),
                    ("gen_width", m.gen_width.to_string()),
                    ("disc_width", m.disc_width.to_string()),
                    ("head_hidden", m.head_hidden.to_string()),
                    ("epochs", t.epochs.to_string()),
                    ("train_frames", t.train_frames.to_string()),
                    ("eval_frames", t.eval_frames.to_string()),
                    ("lr", t.step.lr.to_string()),
                    ("lr_g", d.lr_g.to_string()),
                    ("lr_d", d.lr_d.to_string()),
                    ("pos_weight", t.step.pos_weight.to_string()),
                    ("freeze_generator_task_grad", t.step.freeze_generator_task_grad.to_string()),
                ],
            ),
            (
                "loss",
                vec![
                    ("lambda_recon", w.lambda_recon.to_string()),
                    ("lambda_adv", w.lambda_adv.to_string()),
                    ("alpha", w.alpha.to_string()),
                    ("beta", w.beta.to_string()),
                    ("gamma", w.gamma.to_string()),
                    ("percep_scope", scope_name(d.percep_scope).to_string()),
                    ("adv_real", d.adv_real.to_string()),
                    ("ssim_window", d.ssim.window.to_string()),
                    ("ssim_sigma", d.ssim.sigma.to_string()),
                    ("ssim_k1", d.ssim.k1.to_string()),
                    ("ssim_k2", d.ssim.k2.to_string()),
                    ("ssim_range", d.ssim.dynamic_range.map_or("auto".to_string(), |r| r.to_string())),
                ],
            ),
            (
                "codec",
                vec![
                    ("levels", m.levels.to_string()),
                    ("dtype", m.dtype.to_string()),
                    ("budget_policy", policy_name(e.policy).to_string()),
                ],
            ),
            (
                "ablation",
                vec![
                    ("suite", self.suite.to_string()),
                    ("seeds", self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")),
                ],
            ),
        ]
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, (section, keys)) in self.entries().into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for (k, v) in keys {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn validate(&self) -> CliResult<()> {
        self.experiment.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}
