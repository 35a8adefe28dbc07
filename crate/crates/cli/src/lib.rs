//! Command-line front end: data generation, training, evaluation, ablations,
//! message tools and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{parse_seeds, RunConfig};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "wavecomm", version, about = "Wavelet-compressed feature sharing for collaborative perception")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every configurable command.
#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file (sectioned key = value).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; same as `[scenario] seed`.
    #[arg(long, env = "WAVECOMM_SEED")]
    pub seed: Option<u64>,
    /// Override any config key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// Same as `[train] mode`: no_collab, idwt_only or generator.
    #[arg(long)]
    pub mode: Option<String>,
    /// Same as `[train] fuse`: base, add_fuse or concat_fuse.
    #[arg(long)]
    pub fuse: Option<String>,
    /// Same as `[codec] levels`.
    #[arg(long)]
    pub levels: Option<String>,
    /// Same as `[codec] dtype`: f16 or f32.
    #[arg(long)]
    pub dtype: Option<String>,
    /// Same as `[train] epochs`.
    #[arg(long)]
    pub epochs: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write training and evaluation scenarios as .wscn files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train end to end; writes model.wcpt, losses.csv and run.conf.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (or fresh weights); writes metrics.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation suite over paired seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Same as `[ablation] suite`.
        #[arg(long)]
        suite: Option<String>,
        /// Same as `[ablation] seeds`, comma separated.
        #[arg(long)]
        seeds: Option<String>,
        /// Load `{arm}_seed{seed}.wcpt` from this directory instead of training.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Save trained arm checkpoints into the output directory.
        #[arg(long)]
        save_checkpoints: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode agent 0 of a scenario and write its LL band as a .wvcm message.
    Compress {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe a .wvcm, .wscn or .wcpt file.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Finite-difference gradient checks of every network.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Summarize result CSVs in a directory; writes report_summary.csv and report.svg.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
pub fn build_config(common: &Common, model: Option<&ModelFlags>, extra: &[(&str, Option<&String>)]) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_str(&text)?;
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects SECTION.KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(m) = model {
        let flags = [
            ("train.mode", &m.mode),
            ("train.fuse", &m.fuse),
            ("codec.levels", &m.levels),
            ("codec.dtype", &m.dtype),
            ("train.epochs", &m.epochs),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(seed) = common.seed {
        cfg.experiment.scenario.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { common, out } => commands::gen_data(&build_config(&common, None, &[])?, &out),
        Command::Train { common, model, out } => commands::train(&build_config(&common, Some(&model), &[])?, &out),
        Command::Eval { common, model, checkpoint, out } => {
            commands::eval(&build_config(&common, Some(&model), &[])?, checkpoint.as_deref(), &out)
        }
        Command::Ablate { common, model, suite, seeds, checkpoints, save_checkpoints, out } => {
            if let Some(s) = &seeds {
                parse_seeds(s)?;
            }
            let cfg = build_config(&common, Some(&model), &[("ablation.suite", suite.as_ref()), ("ablation.seeds", seeds.as_ref())])?;
            commands::ablate(&cfg, &out, checkpoints.as_deref(), save_checkpoints)
        }
        Command::Compress { common, model, input, out } => {
            commands::compress(&build_config(&common, Some(&model), &[])?, &input, out.as_deref()).map(|_| ())
        }
        Command::Inspect { input } => commands::inspect(&input),
        Command::Gradcheck { common, model } => commands::gradcheck(&build_config(&common, Some(&model), &[])?),
        Command::Report { input, out } => {
            let out = out.unwrap_or_else(|| input.clone());
            commands::report(&input, &out)
        }
    }
}

/// Parses `argv` and runs it; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
