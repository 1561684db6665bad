//! Experiment harness for `sumo-core`: subcommands, configuration, and the
//! CSV/JSON files each run leaves in its output directory.
//!
//! Seeds: every random quantity of a run is drawn from a labelled stream
//! `derive_seed(seed, label)` of the run's `--seed`, and parallel draws use
//! one counter-indexed stream per draw, so results do not depend on the
//! thread count.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::time::Instant;

use sumo_core::training::Divergence;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

use output::{finish, OutputDir};

fn diverged(d: &Option<Divergence>) -> Result<()> {
    match d {
        Some(d) => Err(CliError::Diverged {
            step: d.step,
            message: d.message.clone(),
        }),
        None => Ok(()),
    }
}

/// Runs one experiment and writes its outputs. A run that trips a
/// divergence diagnostic still writes every file, then returns
/// [`CliError::Diverged`].
pub fn execute(cfg: &ExperimentConfig) -> Result<()> {
    use ExperimentConfig as E;
    match cfg {
        E::ToyUnbiased(c) => c.validate()?,
        E::Convergence(c) => c.validate()?,
        E::ReverseKl(c) => c.validate()?,
        E::Qpbo(c) => c.validate()?,
        E::Density(c) => c.validate()?,
        E::GenSynthetic(c) => c.validate()?,
    }
    let path = cfg.out().ok_or_else(|| CliError::usage("an output directory is required (--out)"))?;
    let out = OutputDir::create(path)?;
    let start = Instant::now();
    match cfg {
        E::ToyUnbiased(c) => {
            let r = commands::toy::run(c, &out)?;
            finish(&out, cfg, &r, start.elapsed())
        }
        E::Convergence(c) => {
            let r = commands::convergence::run(c, &out)?;
            finish(&out, cfg, &r, start.elapsed())
        }
        E::ReverseKl(c) => {
            let r = commands::reverse_kl::run(c, &out)?;
            finish(&out, cfg, &r, start.elapsed())?;
            diverged(&r.divergence)
        }
        E::Qpbo(c) => {
            let r = commands::qpbo::run(c, &out)?;
            finish(&out, cfg, &r, start.elapsed())
        }
        E::Density(c) => {
            let r = commands::density::run(c, &out)?;
            finish(&out, cfg, &r, start.elapsed())?;
            diverged(&r.divergence)
        }
        E::GenSynthetic(c) => {
            let r = commands::synthetic::run(c, &out)?;
            finish(&out, cfg, &r, start.elapsed())
        }
    }
}
