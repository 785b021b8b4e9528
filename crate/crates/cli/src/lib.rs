//! Command-line front end: training, evaluation, prediction, synthetic
//! data, ablation sweeps and plot export.

pub mod commands;
pub mod config;
pub mod render;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ctma_core::data::Split;
use ctma_core::Result;

use crate::commands::PredictInput;
use crate::config::{parse_config, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ctma", version, about = "Change detection on registered image pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; omitted means all defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override, repeatable: `--set fusion.lambda_mask=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub run_name: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, short)]
    pub quiet: bool,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut o = self.overrides.clone();
        if let Some(n) = &self.run_name {
            o.push(format!("run.name={:?}", n));
        }
        if let Some(s) = self.seed {
            o.push(format!("train.seed={s}"));
        }
        parse_config(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write it to the run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a labelled split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Write coarse mask, probability and change map images.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// First image of a single pair (requires `--b`).
        #[arg(long, requires = "b")]
        a: Option<PathBuf>,
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        /// Dataset split to predict when no pair is given.
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset under `data.root`.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train and score the four component rows.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Render metric curves and change-map overlays.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
        /// Pairs to render overlays for.
        #[arg(long, default_value_t = 4)]
        limit: usize,
    },
}

fn show(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

/// Run one parsed command, printing what it produced.
pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let cfg = common.resolve()?;
            let s = commands::train(&cfg, resume.as_deref(), !common.quiet)?;
            println!("run {}  best epoch {}  final loss {:.5}", s.run_dir.root.display(), s.best_epoch, s.final_loss.unwrap_or(f64::NAN));
        }
        Command::Eval { common, checkpoint, split } => {
            let cfg = common.resolve()?;
            let (r, files) = commands::eval(&cfg, checkpoint.as_deref(), split)?;
            println!(
                "precision {:.4}  recall {:.4}  f1 {:.4}  oa {:.4}  (coarse f1 {:.4})",
                r.fine.precision, r.fine.recall, r.fine.f1, r.fine.oa, r.coarse.f1
            );
            show(&files);
        }
        Command::Predict { common, checkpoint, a, b, split, out } => {
            let cfg = common.resolve()?;
            let input = match (a, b) {
                (Some(a), Some(b)) => PredictInput::Files { a, b },
                _ => PredictInput::Split(match split {
                    Some(s) => s,
                    None => cfg.data.eval_split.parse()?,
                }),
            };
            show(&commands::predict(&cfg, checkpoint.as_deref(), &input, out.as_deref())?);
        }
        Command::Synth { common } => show(&commands::synth(&common.resolve()?)?),
        Command::Ablate { common } => {
            let path = commands::ablate(&common.resolve()?)?;
            print!("{}", std::fs::read_to_string(&path)?);
            show(&[path]);
        }
        Command::Plot { common, checkpoint, split, limit } => {
            show(&commands::plot(&common.resolve()?, checkpoint.as_deref(), split, limit)?)
        }
    }
    Ok(())
}
