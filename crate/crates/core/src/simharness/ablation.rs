//! Paired-seed ablation suites.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use super::experiment::{evaluate, summarize, train_e2e, EvalSummary, ExperimentConfig};
use super::model::{CollabMode, ModelConfig};
use crate::distillation::FuseKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    /// No collaboration, lowpass inverse and generator.
    Reconstruction,
    /// Sender-side fusion of detail bands.
    FuseVariant,
    /// One to three decomposition levels.
    Multilevel,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Reconstruction, Suite::FuseVariant, Suite::Multilevel];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Reconstruction => "reconstruction",
            Suite::FuseVariant => "fuse_variant",
            Suite::Multilevel => "multilevel",
        }
    }

    /// Arms of the suite derived from `base`.
    pub fn arms(self, base: &ModelConfig) -> Vec<Arm> {
        let arm = |name: String, mode, fuse, levels| Arm { name, model: ModelConfig { mode, fuse, levels, ..*base } };
        match self {
            Suite::Reconstruction => CollabMode::ALL
                .into_iter()
                .map(|m| arm(m.name().to_string(), m, FuseKind::Base, base.levels))
                .collect(),
            Suite::FuseVariant => FuseKind::ALL
                .into_iter()
                .map(|f| arm(f.name().to_string(), CollabMode::Generator, f, base.levels))
                .collect(),
            Suite::Multilevel => (1..=crate::wavelet::MAX_LEVELS)
                .map(|l| arm(format!("level{l}"), CollabMode::Generator, FuseKind::Base, l))
                .collect(),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation suite {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    pub model: ModelConfig,
}

impl Arm {
    pub fn checkpoint_name(&self, seed: u64) -> String {
        format!("{}_seed{seed}.wcpt", self.name)
    }
}

/// One arm evaluated under one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSeedResult {
    pub arm: String,
    pub seed: u64,
    pub eval: EvalSummary,
}

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub ap30_mean: f64,
    pub ap30_sd: f64,
    pub ap50_mean: f64,
    pub ap50_sd: f64,
    pub comm_log2: f64,
    pub n: usize,
}

/// Sample mean and standard deviation; the deviation of fewer than two
/// values is 0.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub suite: Suite,
    pub rows: Vec<ArmSeedResult>,
    pub summary: Vec<ArmSummary>,
}

impl AblationResult {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == name)
    }

    /// Per-seed results of one arm, in seed order.
    pub fn seeds_of(&self, name: &str) -> Vec<&ArmSeedResult> {
        self.rows.iter().filter(|r| r.arm == name).collect()
    }
}

pub fn summarize_arms(rows: &[ArmSeedResult]) -> Vec<ArmSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.arm.as_str()) {
            names.push(&r.arm);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let of: Vec<&ArmSeedResult> = rows.iter().filter(|r| r.arm == name).collect();
            let (ap30_mean, ap30_sd) = mean_sd(&of.iter().map(|r| r.eval.ap30).collect::<Vec<_>>());
            let (ap50_mean, ap50_sd) = mean_sd(&of.iter().map(|r| r.eval.ap50).collect::<Vec<_>>());
            ArmSummary {
                arm: name.to_string(),
                ap30_mean,
                ap30_sd,
                ap50_mean,
                ap50_sd,
                comm_log2: of[0].eval.comm_log2,
                n: of.len(),
            }
        })
        .collect()
}

/// Where arm weights come from.
#[derive(Clone, Copy, Debug)]
pub enum Checkpoints<'a> {
    /// Train every arm from scratch.
    Train,
    /// Train and write `{arm}_seed{seed}.wcpt` into the directory.
    TrainAndSave(&'a Path),
    /// Load `{arm}_seed{seed}.wcpt` from the directory.
    Load(&'a Path),
}

/// Runs every arm of `suite` for every seed. All arms under one seed share
/// the training and evaluation scenario streams and the initialization of
/// their common parts.
pub fn run_ablation(suite: Suite, base: &ExperimentConfig, seeds: &[u64], ckpt: Checkpoints<'_>) -> Result<AblationResult> {
    let arms = suite.arms(&base.model);
    run_arms(suite, &arms, base, seeds, ckpt)
}

pub fn run_arms(
    suite: Suite,
    arms: &[Arm],
    base: &ExperimentConfig,
    seeds: &[u64],
    ckpt: Checkpoints<'_>,
) -> Result<AblationResult> {
    let mut rows = Vec::with_capacity(arms.len() * seeds.len());
    for &seed in seeds {
        for arm in arms {
            let cfg = ExperimentConfig { model: arm.model, ..base.with_seed(seed) };
            cfg.validate()?;
            let mut model = match ckpt {
                Checkpoints::Load(dir) => {
                    let path = dir.join(arm.checkpoint_name(seed));
                    let buf = fs::read(&path)
                        .map_err(|e| Error::config(format!("missing checkpoint {}: {e}", path.display())))?;
                    let mut m = cfg.fresh_model()?;
                    m.load(&buf)?;
                    m
                }
                Checkpoints::Train => train_e2e(&cfg)?.model,
                Checkpoints::TrainAndSave(dir) => {
                    let m = train_e2e(&cfg)?.model;
                    fs::write(dir.join(arm.checkpoint_name(seed)), m.save()?)?;
                    m
                }
            };
            let eval = summarize(&evaluate(&mut model, &cfg)?);
            rows.push(ArmSeedResult { arm: arm.name.clone(), seed, eval });
        }
    }
    let summary = summarize_arms(&rows);
    Ok(AblationResult { suite, rows, summary })
}

pub const ABLATION_ROWS_HEADER: &str = "suite,arm,seed,ap30,ap50,comm_log2,frames";
pub const ABLATION_SUMMARY_HEADER: &str = "arm,ap30_mean,ap30_sd,ap50_mean,ap50_sd,comm_log2,n";

pub fn write_ablation_rows<W: Write>(mut out: W, res: &AblationResult) -> Result<()> {
    writeln!(out, "{ABLATION_ROWS_HEADER}")?;
    for r in &res.rows {
        let e = &r.eval;
        writeln!(out, "{},{},{},{:.6},{:.6},{:.6},{}", res.suite, r.arm, r.seed, e.ap30, e.ap50, e.comm_log2, e.frames)?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut out: W, summary: &[ArmSummary]) -> Result<()> {
    writeln!(out, "{ABLATION_SUMMARY_HEADER}")?;
    for s in summary {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            s.arm, s.ap30_mean, s.ap30_sd, s.ap50_mean, s.ap50_sd, s.comm_log2, s.n
        )?;
    }
    Ok(())
}
