//! Command-line flags. Each flag is optional and, when given, overrides the
//! same key from `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{
    self, ConvergenceConfig, DataSource, DensityRunConfig, EstimatorKind, ExperimentConfig,
    ObjectiveKind, PolicyKind, QpboRunConfig, ReverseKlRunConfig, SyntheticConfig, TargetKind,
    ToyConfig,
};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "sumo", version = env!("SUMO_BUILD_ID"), about = "Unbiased log-likelihood estimation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// SUMO and IWAE against the closed-form marginal of the Gaussian toy.
    ToyUnbiased(ToyArgs),
    /// Moments of the IWAE ladder differences and their log-log slopes.
    Convergence(ConvergenceArgs),
    /// Fit a latent-variable model to an unnormalized target by reverse KL.
    ReverseKl(ReverseKlArgs),
    /// Pseudo-Boolean maximization with policy-gradient training.
    Qpbo(QpboArgs),
    /// Density estimation on binary data.
    Density(DensityArgs),
    /// Write a seeded Bernoulli-mixture dataset.
    GenSynthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with any of this subcommand's keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// e.g. `zeta_tail(alpha=80,rate=0.9)` or `geometric(rate=0.5)`.
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub perturb: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub kmin_fit: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub perturb: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReverseKlArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    #[arg(long)]
    pub expected_cost: Option<f64>,
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long, value_enum)]
    pub target: Option<TargetKind>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub encoder_clip: Option<f64>,
    #[arg(long)]
    pub decoder_clip: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub blowup_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct QpboArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub ar_hidden: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Solve the instance exactly and report normalized gaps (d ≤ 24).
    #[arg(long)]
    pub oracle: bool,
    /// Instance JSON file instead of a seeded random instance.
    #[arg(long)]
    pub instance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub data: Option<DataSource>,
    #[arg(long)]
    pub train_file: Option<PathBuf>,
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub dist: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
}

/// `cfg.field = value` for every flag that was given.
macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = v; } )*
    };
}

/// As [`overlay`], for config fields that are themselves optional.
macro_rules! overlay_opt {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if $args.$field.is_some() { $cfg.$field = $args.$field.clone(); } )*
    };
}

fn common<T>(cfg: &mut T, c: &Common, seed: impl FnOnce(&mut T) -> &mut u64, out: impl FnOnce(&mut T) -> &mut Option<PathBuf>) {
    if let Some(s) = c.seed {
        *seed(cfg) = s;
    }
    if c.out.is_some() {
        *out(cfg) = c.out.clone();
    }
}

impl Command {
    /// Merges the config file and flags into the effective configuration.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        Ok(match self {
            Command::ToyUnbiased(a) => {
                let mut c: ToyConfig = config::load(a.common.config.as_deref(), "toy-unbiased")?;
                common(&mut c, &a.common, |c| &mut c.seed, |c| &mut c.out);
                overlay!(c, a; dim, trials, m, dist, perturb);
                ExperimentConfig::ToyUnbiased(c)
            }
            Command::Convergence(a) => {
                let mut c: ConvergenceConfig = config::load(a.common.config.as_deref(), "convergence")?;
                common(&mut c, &a.common, |c| &mut c.seed, |c| &mut c.out);
                overlay!(c, a; kmax, kmin_fit, trials, dim, perturb);
                ExperimentConfig::Convergence(c)
            }
            Command::ReverseKl(a) => {
                let mut c: ReverseKlRunConfig = config::load(a.common.config.as_deref(), "reverse-kl")?;
                common(&mut c, &a.common, |c| &mut c.seed, |c| &mut c.out);
                overlay!(c, a; estimator, expected_cost, dist, target, steps, batch, latent_dim, hidden, blowup_threshold);
                overlay_opt!(c, a; lr, encoder_clip, decoder_clip);
                ExperimentConfig::ReverseKl(c)
            }
            Command::Qpbo(a) => {
                let mut c: QpboRunConfig = config::load(a.common.config.as_deref(), "qpbo")?;
                common(&mut c, &a.common, |c| &mut c.seed, |c| &mut c.out);
                overlay!(c, a; d, policy, lambda, steps, batch, latent_dim, hidden, ar_hidden, m, dist);
                overlay_opt!(c, a; lr, instance);
                c.oracle |= a.oracle;
                ExperimentConfig::Qpbo(c)
            }
            Command::Density(a) => {
                let mut c: DensityRunConfig = config::load(a.common.config.as_deref(), "density")?;
                common(&mut c, &a.common, |c| &mut c.seed, |c| &mut c.out);
                overlay!(c, a; data, objective, k, m, dist, steps, batch, latent_dim, hidden, eval_k);
                overlay_opt!(c, a; train_file, test_file, lr);
                ExperimentConfig::Density(c)
            }
            Command::GenSynthetic(a) => {
                let mut c: SyntheticConfig = config::load(a.common.config.as_deref(), "gen-synthetic")?;
                common(&mut c, &a.common, |c| &mut c.seed, |c| &mut c.out);
                overlay!(c, a; dim, components, rows);
                overlay_opt!(c, a; p);
                ExperimentConfig::GenSynthetic(c)
            }
        })
    }
}
