//! `sptransfer`: fit, predict and benchmark commands over CSV inputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod table;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::BenchKind;
use crate::config::{parse_entries, parse_override, ResolvedConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "sptransfer",
    version,
    about = "Spatial-regression-based transfer learning"
)]
pub struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log more (-v info, -vv debug, -vvv trace). Logs go to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train every area, train the pooled model and save the bundle.
    Fit {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training CSV.
        #[arg(long)]
        input: PathBuf,
    },
    /// Predict the target area at the rows of a CSV.
    Predict {
        /// Model bundle written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// CSV with x_coord, y_coord and the model's covariates.
        #[arg(long)]
        input: PathBuf,
        /// Output path; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte-Carlo benchmarks.
    Bench {
        #[command(subcommand)]
        kind: BenchCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// GP field on a square grid, target only.
    Toy(BenchArgs),
    /// Synthetic target plus source areas.
    Transfer(BenchArgs),
    /// Subsampling (or temporal) evaluation on an input CSV.
    Subsample {
        #[command(flatten)]
        args: BenchArgs,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Validate the configuration and exit without running.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed; same as `--set seed=N`
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for output files; same as `--set output_dir=DIR`
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self, command: &str) -> Result<ResolvedConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::io(format!("cannot read {}", p.display()), e))?;
                Some(parse_entries(&text)?)
            }
            None => None,
        };
        let mut overrides = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        if let Some(s) = self.seed {
            overrides.push(("seed".into(), s.to_string()));
        }
        if let Some(d) = &self.output_dir {
            overrides.push(("output_dir".into(), d.display().to_string()));
        }
        Ok(ResolvedConfig::resolve(command, file.as_ref(), &overrides))
    }
}

/// Executes a parsed command, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Fit { config, input } => {
            commands::fit(&config.resolve("fit")?, input, out)?;
        }
        Command::Predict {
            model,
            input,
            output,
        } => {
            let csv = commands::predict(model, input)?;
            match output {
                Some(p) => output::write_file(p, &csv)?,
                None => output::emit(out, &csv)?,
            }
        }
        Command::Bench { kind } => {
            let (kind, args, input) = match kind {
                BenchCommand::Toy(a) => (BenchKind::Toy, a, None),
                BenchCommand::Transfer(a) => (BenchKind::Transfer, a, None),
                BenchCommand::Subsample { args, input } => {
                    (BenchKind::Subsample, args, Some(input.as_path()))
                }
            };
            let config = args.config.resolve(kind.name())?;
            commands::bench(kind, &config, input, args.dry_run, out)?;
        }
    }
    Ok(())
}
