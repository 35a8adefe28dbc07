//! Episodes, end-to-end training and result CSVs.

use std::io::Write;
use std::time::{Duration, Instant};

use super::model::{CollabModel, ModelConfig, StepConfig};
use super::scenario::{gen_scenario, Scenario, ScenarioConfig};
use crate::distillation::{DistillConfig, LossReport};
use crate::error::{Error, Result};
use crate::perception::{detection_metric, FEATURE_STRIDE, IOU_THRESHOLDS};
use crate::tensorcore::{mix_seed, Mode};
use crate::wirecodec::{BudgetOutcome, BudgetPolicy, CommVolumeReport};

const TRAIN_STREAM: u64 = 0x7000_0000;
const EVAL_STREAM: u64 = 0xE000_0000;
const MODEL_STREAM: u64 = 0x3000_0000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub train_frames: usize,
    pub eval_frames: usize,
    pub step: StepConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, train_frames: 16, eval_frames: 16, step: StepConfig::default() }
    }
}

/// Everything that determines one training and evaluation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub model: ModelConfig,
    pub distill: DistillConfig,
    pub train: TrainConfig,
    pub policy: BudgetPolicy,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            model: ModelConfig::default(),
            distill: DistillConfig::default(),
            train: TrainConfig::default(),
            policy: BudgetPolicy::Reject,
        }
    }
}

impl ExperimentConfig {
    /// A reduced profile that trains in seconds per run: 64x64 world, 16
    /// feature channels, 6 objects of 4 to 8 cells, sensing radius 24.
    pub fn compact() -> Self {
        Self {
            scenario: ScenarioConfig {
                world_h: 64,
                world_w: 64,
                n_objects: 6,
                obj_min: 4,
                obj_max: 8,
                radius: 24.0,
                ..ScenarioConfig::default()
            },
            model: ModelConfig { channels: 16, gen_width: 32, disc_width: 16, head_hidden: 16, ..ModelConfig::default() },
            train: TrainConfig { epochs: 20, train_frames: 32, eval_frames: 32, ..TrainConfig::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.scenario.validate(self.model.levels)?;
        self.distill.validate()?;
        let step = &self.train.step;
        if !(step.lr > 0.0 && step.lr.is_finite() && step.pos_weight > 0.0 && step.pos_weight.is_finite()) {
            return Err(Error::config("lr and pos_weight must be positive"));
        }
        if self.train.train_frames == 0 && self.train.epochs > 0 {
            return Err(Error::config("training needs at least one frame"));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self
    }

    pub fn train_scenario(&self, i: usize) -> Result<Scenario> {
        self.frame_scenario(TRAIN_STREAM, i)
    }

    pub fn eval_scenario(&self, i: usize) -> Result<Scenario> {
        self.frame_scenario(EVAL_STREAM, i)
    }

    fn frame_scenario(&self, stream: u64, i: usize) -> Result<Scenario> {
        let cfg = ScenarioConfig { seed: mix_seed(self.scenario.seed, stream + i as u64), ..self.scenario };
        gen_scenario(&cfg)
    }

    /// A fresh model; its initialization depends only on the seed.
    pub fn fresh_model(&self) -> Result<CollabModel> {
        CollabModel::new(self.model, self.distill, mix_seed(self.seed(), MODEL_STREAM))
    }
}

/// Outcome of one evaluation frame.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub frame_id: u32,
    pub comm: Vec<CommVolumeReport>,
    pub budget: Option<BudgetOutcome>,
    /// Fused AP per IoU threshold; `None` when the ego frame has no truth.
    pub ap: Option<Vec<f64>>,
    /// AP of the head on ego features alone.
    pub ego_ap: Option<Vec<f64>>,
    pub elapsed: Duration,
}

impl EpisodeResult {
    pub fn total_bytes(&self) -> u64 {
        self.comm.iter().map(|r| r.bytes).sum()
    }

    pub fn comm_log2(&self) -> f64 {
        self.comm.first().map_or(0.0, |r| r.log2_volume)
    }
}

/// Evaluates `model` on one scenario with agent 0 as ego.
pub fn run_episode(model: &mut CollabModel, scen: &Scenario, frame_id: u32, policy: BudgetPolicy) -> Result<EpisodeResult> {
    let start = Instant::now();
    let budget = model.config.default_budget(scen.world.height, scen.world.width, scen.agents.len(), policy)?;
    let out = model.forward_frame(scen, frame_id, Mode::Eval, Some(&budget), true)?;
    let truth = scen.truth_for(scen.ego());
    let ap = detection_metric(&out.logits, &truth, FEATURE_STRIDE, &IOU_THRESHOLDS)?;
    let ego_ap = match &out.ego_logits {
        Some(l) => detection_metric(l, &truth, FEATURE_STRIDE, &IOU_THRESHOLDS)?,
        None => None,
    };
    Ok(EpisodeResult { frame_id, comm: out.comm, budget: out.budget, ap, ego_ap, elapsed: start.elapsed() })
}

/// Evaluates on the experiment's held-out frames.
pub fn evaluate(model: &mut CollabModel, cfg: &ExperimentConfig) -> Result<Vec<EpisodeResult>> {
    (0..cfg.train.eval_frames)
        .map(|i| run_episode(model, &cfg.eval_scenario(i)?, i as u32, cfg.policy))
        .collect()
}

/// Trained model plus its per-step loss trajectory.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CollabModel,
    pub losses: Vec<LossReport>,
}

/// Trains a fresh model end to end; one step per training frame.
pub fn train_e2e(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = cfg.fresh_model()?;
    let scenes = (0..cfg.train.train_frames).map(|i| cfg.train_scenario(i)).collect::<Result<Vec<_>>>()?;
    let masks = scenes
        .iter()
        .map(|s| s.truth_for(s.ego()).mask(FEATURE_STRIDE))
        .collect::<Result<Vec<_>>>()?;
    let mut losses = Vec::with_capacity(cfg.train.epochs * scenes.len());
    let mut step = 0;
    for _ in 0..cfg.train.epochs {
        for (i, (scen, mask)) in scenes.iter().zip(&masks).enumerate() {
            let out = model.forward_frame(scen, i as u32, Mode::Train, None, false)?;
            losses.push(model.backward_and_step(&out, mask, step, &cfg.train.step)?);
            step += 1;
        }
    }
    Ok(TrainOutcome { model, losses })
}

/// One row of the per-frame metric CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub frame_id: u32,
    pub ap30: f64,
    pub ap50: f64,
    pub comm_log2: f64,
    pub variant: String,
    pub seed: u64,
}

pub const METRIC_CSV_HEADER: &str = "frame_id,ap30,ap50,comm_log2,variant,seed";

/// Rows for the frames that have truth.
pub fn metric_rows(results: &[EpisodeResult], variant: &str, seed: u64) -> Vec<MetricRow> {
    results
        .iter()
        .filter_map(|r| {
            let ap = r.ap.as_ref()?;
            Some(MetricRow {
                frame_id: r.frame_id,
                ap30: ap[0],
                ap50: ap[1],
                comm_log2: r.comm_log2(),
                variant: variant.to_string(),
                seed,
            })
        })
        .collect()
}

pub fn write_metric_csv<W: Write>(mut out: W, rows: &[MetricRow]) -> Result<()> {
    writeln!(out, "{METRIC_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{:.6},{:.6},{:.6},{},{}", r.frame_id, r.ap30, r.ap50, r.comm_log2, r.variant, r.seed)?;
    }
    Ok(())
}

/// Mean AP over frames with truth, per threshold, for fused and ego-only
/// predictions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub ap30: f64,
    pub ap50: f64,
    pub ego_ap30: f64,
    pub ego_ap50: f64,
    pub comm_log2: f64,
    pub frames: usize,
}

pub fn summarize(results: &[EpisodeResult]) -> EvalSummary {
    let mut s = EvalSummary { ap30: 0.0, ap50: 0.0, ego_ap30: 0.0, ego_ap50: 0.0, comm_log2: 0.0, frames: 0 };
    for r in results {
        if let Some(ap) = &r.ap {
            s.ap30 += ap[0];
            s.ap50 += ap[1];
            if let Some(e) = &r.ego_ap {
                s.ego_ap30 += e[0];
                s.ego_ap50 += e[1];
            }
            s.frames += 1;
        }
    }
    if s.frames > 0 {
        let n = s.frames as f64;
        s.ap30 /= n;
        s.ap50 /= n;
        s.ego_ap30 /= n;
        s.ego_ap50 /= n;
    }
    s.comm_log2 = results.first().map_or(0.0, |r| r.comm_log2());
    s
}
