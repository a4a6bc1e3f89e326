//! Command-line driver for astrec.

pub mod commands;
pub mod config;
pub mod dataset_dir;
pub mod output;

use std::path::PathBuf;

use astrec::{ErrorKind, Result};
use clap::{Parser, Subcommand};
use serde_json::Value;

use crate::config::{parse_grid_axis, RawFormat};

#[derive(Debug, Parser)]
#[command(
    name = "astrec",
    version,
    about = "Debiased recommendation with adversarial self-training"
)]
pub struct Cli {
    /// JSON run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set trainer.lr=0.01`. Repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    /// Prepared dataset directory (sets data.dir).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert raw logged and uniform feedback into a dataset directory.
    Prepare {
        /// Raw logged feedback (sets data.raw_biased).
        #[arg(long)]
        biased: Option<PathBuf>,
        /// Raw uniform feedback (sets data.raw_uniform).
        #[arg(long)]
        uniform: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Ids in raw triple files start at 1.
        #[arg(long)]
        one_based: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its best checkpoint and history.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Run this many consecutive seeds and add mean and stderr rows.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranking metrics of a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also compute the shift diagnostics.
        #[arg(long)]
        diagnostics: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shift diagnostics of a checkpoint.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full AST against single-component removals.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// Components to remove, e.g. `A,S,E`.
        #[arg(long, value_delimiter = ',')]
        components: Option<Vec<String>>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every cell of a hyperparameter grid.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// Grid axis `key=v1,v2,...`. Repeatable; replaces sweep.grid when given.
        #[arg(long)]
        grid: Vec<String>,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Triples,
    Matrix,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Prepare { .. } => "prepare",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Diagnose { .. } => "diagnose",
            Command::Ablate { .. } => "ablate",
            Command::Sweep { .. } => "sweep",
        }
    }

    /// Flag values as config overrides; they win over the file and `--set`.
    fn overrides(&self) -> Result<Vec<(&'static str, Value)>> {
        let path = |p: &PathBuf| Value::String(p.display().to_string());
        let mut o = Vec::new();
        let data = match self {
            Command::Train { data, .. }
            | Command::Evaluate { data, .. }
            | Command::Diagnose { data, .. }
            | Command::Ablate { data, .. }
            | Command::Sweep { data, .. } => data.data.as_ref(),
            _ => None,
        };
        if let Some(d) = data {
            o.push(("data.dir", path(d)));
        }
        match self {
            Command::Prepare {
                biased,
                uniform,
                format,
                one_based,
                ..
            } => {
                if let Some(b) = biased {
                    o.push(("data.raw_biased", path(b)));
                }
                if let Some(u) = uniform {
                    o.push(("data.raw_uniform", path(u)));
                }
                if let Some(f) = format {
                    let f = match f {
                        FormatArg::Triples => RawFormat::Triples,
                        FormatArg::Matrix => RawFormat::Matrix,
                    };
                    o.push(("data.format", serde_json::to_value(f).expect("enum serializes")));
                }
                if *one_based {
                    o.push(("data.one_based", Value::Bool(true)));
                }
            }
            Command::Train { seeds, .. } => {
                if let Some(s) = seeds {
                    o.push(("seeds", Value::from(*s)));
                }
            }
            Command::Evaluate {
                checkpoint,
                diagnostics,
                ..
            } => {
                if let Some(c) = checkpoint {
                    o.push(("eval.checkpoint", path(c)));
                }
                if *diagnostics {
                    o.push(("eval.diagnostics", Value::Bool(true)));
                }
            }
            Command::Diagnose { checkpoint, .. } => {
                if let Some(c) = checkpoint {
                    o.push(("eval.checkpoint", path(c)));
                }
            }
            Command::Ablate { components, seeds, .. } => {
                if let Some(c) = components {
                    o.push(("ablation.components", Value::from(c.clone())));
                }
                if let Some(s) = seeds {
                    o.push(("seeds", Value::from(*s)));
                }
            }
            Command::Sweep { grid, parallel, .. } => {
                if !grid.is_empty() {
                    let axes = grid.iter().map(|g| parse_grid_axis(g)).collect::<Result<Vec<_>>>()?;
                    o.push(("sweep.grid", serde_json::to_value(axes).expect("grid serializes")));
                }
                if let Some(p) = parallel {
                    o.push(("sweep.parallel", Value::from(*p)));
                }
            }
            Command::Synth { .. } => {}
        }
        Ok(o)
    }

    fn out(&self) -> &PathBuf {
        match self {
            Command::Synth { out }
            | Command::Prepare { out, .. }
            | Command::Train { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Diagnose { out, .. }
            | Command::Ablate { out, .. }
            | Command::Sweep { out, .. } => out,
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = config::load_with(cli.config.as_deref(), &cli.set, &cli.command.overrides()?)?;
    let out = cli.command.out();
    match &cli.command {
        Command::Synth { .. } => commands::synth(&config, out),
        Command::Prepare { .. } => commands::prepare(&config, out),
        Command::Train { .. } => commands::train(&config, out),
        Command::Evaluate { .. } => commands::evaluate_cmd(&config, out),
        Command::Diagnose { .. } => commands::diagnose_cmd(&config, out),
        Command::Ablate { .. } => commands::ablate(&config, out),
        Command::Sweep { .. } => commands::sweep(&config, out),
    }
    .inspect_err(|_| eprintln!("[astrec] {} failed", cli.command.name()))
}

/// 2 configuration, 3 data, 4 numerical or training.
pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}
