//! `gnnic` command-line experiments: dataset generation, training,
//! evaluation sweeps, cross-scale runs, the dropout study and factor error
//! analysis.

pub mod analyze;
pub mod artifacts;
pub mod config;
pub mod crossscale;
pub mod dropout;
pub mod eval;
pub mod gen;
pub mod train;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use gnnic::train::TrainMode;

use crate::config::{ExperimentConfig, Overrides};

#[derive(Parser, Debug)]
#[command(name = "gnnic", version, about = "Learned incomplete-Cholesky preconditioner experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Training worker threads; timed evaluation always runs on one.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Training state file to continue from (`train` only).
    #[arg(long, global = true)]
    pub resume: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write train/validation/test Matrix Market files and a manifest.
    Gen,
    Train,
    /// Compare None, Jacobi, IC0, NIC and GnnIC on test matrices.
    Eval,
    /// Apply fixed checkpoints across matrix sizes.
    Crossscale,
    /// Fill-in dropout sweep over thresholds.
    Dropout,
    /// Relative error of learned factors against IC(0).
    Analyze,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Nic,
    Gnnic,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nic => TrainMode::Nic,
            ModeArg::Gnnic => TrainMode::GnnIc,
        }
    }
}

impl Cli {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            mode: self.mode.map(Into::into),
            threads: self.threads,
            resume: self.resume.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run_command(command: Command, cfg: &ExperimentConfig) -> Result<()> {
    match command {
        Command::Gen => {
            gen::run(cfg)?;
        }
        Command::Train => {
            train::run(cfg)?;
        }
        Command::Eval => {
            let r = eval::run(cfg)?;
            for s in &r.summary {
                println!(
                    "{:<7} iters {:>9.2}  p_time {:.4e}  cg_time {:.4e}  total {:.4e}",
                    s.method.name(),
                    s.mean_iterations,
                    s.mean_p_time,
                    s.mean_cg_time,
                    s.mean_total_time
                );
            }
        }
        Command::Crossscale => {
            for r in crossscale::run(cfg)?.rows {
                println!(
                    "n={:<8} {:<7} iters {:>9.2}  ratio {:.3}",
                    r.n,
                    r.method.name(),
                    r.mean_iterations,
                    r.ratio_to_ic0
                );
            }
        }
        Command::Dropout => {
            for r in dropout::run(cfg)?.rows {
                println!(
                    "eps {:<8} nnz {:>9} (-{:.1}%)  iters {:>6} (+{:.1}%)",
                    r.eps,
                    r.nnz,
                    100.0 * r.nnz_reduction,
                    r.iterations,
                    100.0 * r.iteration_increase
                );
            }
        }
        Command::Analyze => {
            for m in analyze::run(cfg)?.methods {
                println!(
                    "{:<7} diagonal mean {:.4} max {:.4}  off-diagonal mean {:.4} max {:.4}",
                    m.method.name(),
                    m.diagonal.mean,
                    m.diagonal.max,
                    m.off_diagonal.mean,
                    m.off_diagonal.max
                );
            }
        }
    }
    Ok(())
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let cfg = cli.resolve()?;
    run_command(cli.command, &cfg)
}
