//! Experiment configurations.
//!
//! Every subcommand reads an optional flat TOML file (`--config`), then
//! applies its command-line flags on top. The merged result is what runs and
//! what gets echoed into the output directory. A file may carry
//! `experiment = "<subcommand>"`; if present it must match.
//!
//! The output directory is never echoed, so reruns into different
//! directories produce identical files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sumo_core::trunc::TruncationDistribution;

use crate::error::{CliError, Result};

fn default_dist() -> String {
    TruncationDistribution::default().to_string()
}

/// Parses a distribution string; fixed truncation is rejected because no
/// roulette estimator accepts it.
pub fn parse_dist(s: &str) -> Result<TruncationDistribution> {
    let dist: TruncationDistribution = s.parse().map_err(|e: sumo_core::Error| CliError::usage(e.to_string()))?;
    dist.require_full_support().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(dist)
}

fn need(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::usage(msg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub dim: usize,
    pub trials: usize,
    pub m: usize,
    pub dist: String,
    /// Standard deviation of the noise added to the optimal encoder map.
    pub perturb: f64,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            trials: 100_000,
            m: 1,
            dist: default_dist(),
            perturb: 0.01,
            seed: 0,
            out: None,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        need(self.dim >= 1, "--dim must be at least 1")?;
        need(self.trials >= 2, "--trials must be at least 2")?;
        need(self.m >= 1, "--m must be at least 1")?;
        need(self.perturb.is_finite() && self.perturb >= 0.0, "--perturb must be finite and non-negative")?;
        parse_dist(&self.dist).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub dim: usize,
    pub kmax: usize,
    /// Smallest `k` entering the slope fits.
    pub kmin_fit: usize,
    pub trials: usize,
    pub perturb: f64,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            kmax: 64,
            kmin_fit: 4,
            trials: 1000,
            perturb: 0.01,
            seed: 0,
            out: None,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        need(self.dim >= 1, "--dim must be at least 1")?;
        need(self.trials >= 1, "--trials must be at least 1")?;
        need(self.kmin_fit >= 1, "--kmin-fit must be at least 1")?;
        need(self.kmax > self.kmin_fit, "--kmax must exceed --kmin-fit")?;
        need(self.perturb.is_finite() && self.perturb >= 0.0, "--perturb must be finite and non-negative")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Sumo,
    Iwae,
    IwaeMinimax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Funnel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReverseKlRunConfig {
    pub estimator: EstimatorKind,
    /// Expected proposal samples per estimate. SUMO uses
    /// `m = round(cost − E[K])`; the IWAE variants use `k = round(cost)`.
    pub expected_cost: f64,
    pub dist: String,
    pub target: TargetKind,
    pub steps: u64,
    pub batch: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Overrides the RMSprop preset learning rate.
    pub lr: Option<f64>,
    pub encoder_clip: Option<f64>,
    pub decoder_clip: Option<f64>,
    pub blowup_threshold: f64,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for ReverseKlRunConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Sumo,
            expected_cost: 15.0,
            dist: default_dist(),
            target: TargetKind::Funnel,
            steps: 20_000,
            batch: 4,
            latent_dim: 20,
            hidden: vec![200],
            lr: None,
            encoder_clip: None,
            decoder_clip: None,
            blowup_threshold: -50.0,
            seed: 0,
            out: None,
        }
    }
}

impl ReverseKlRunConfig {
    pub fn validate(&self) -> Result<()> {
        need(self.expected_cost.is_finite() && self.expected_cost >= 1.0, "--expected-cost must be at least 1")?;
        need(self.batch >= 1, "--batch must be at least 1")?;
        need(self.latent_dim >= 1, "--latent-dim must be at least 1")?;
        need(self.hidden.iter().all(|&h| h >= 1), "hidden layer widths must be positive")?;
        need(self.lr.is_none_or(|v| v.is_finite() && v > 0.0), "--lr must be positive")?;
        need(self.blowup_threshold.is_finite(), "blowup_threshold must be finite")?;
        for c in [self.encoder_clip, self.decoder_clip].into_iter().flatten() {
            need(c.is_finite() && c > 0.0, "clip norms must be positive")?;
        }
        parse_dist(&self.dist).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Indep,
    Autoreg,
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpboRunConfig {
    pub d: usize,
    pub policy: PolicyKind,
    pub lambda: f64,
    pub steps: u64,
    pub batch: usize,
    /// Latent policy: latent size and decoder hidden widths.
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Autoregressive policy hidden width.
    pub ar_hidden: usize,
    /// SUMO minimum terms for the latent policy's entropy estimate.
    pub m: usize,
    pub dist: String,
    pub lr: Option<f64>,
    pub oracle: bool,
    /// Instance file; a seeded random instance when absent.
    pub instance: Option<PathBuf>,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for QpboRunConfig {
    fn default() -> Self {
        Self {
            d: 16,
            policy: PolicyKind::Latent,
            lambda: 0.01,
            steps: 20_000,
            batch: 8,
            latent_dim: 8,
            hidden: vec![32],
            ar_hidden: 32,
            m: 10,
            dist: default_dist(),
            lr: None,
            oracle: false,
            instance: None,
            seed: 0,
            out: None,
        }
    }
}

impl QpboRunConfig {
    pub fn validate(&self) -> Result<()> {
        need(self.d >= 1, "--d must be at least 1")?;
        need(self.lambda.is_finite() && self.lambda >= 0.0, "--lambda must be finite and non-negative")?;
        need(self.batch >= 1, "--batch must be at least 1")?;
        need(self.latent_dim >= 1 && self.ar_hidden >= 1, "layer sizes must be positive")?;
        need(self.hidden.iter().all(|&h| h >= 1), "hidden layer widths must be positive")?;
        need(self.m >= 1, "--m must be at least 1")?;
        need(self.lr.is_none_or(|v| v.is_finite() && v > 0.0), "--lr must be positive")?;
        parse_dist(&self.dist).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Sumo,
    Iwae,
    Elbo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityRunConfig {
    pub data: DataSource,
    /// Binary CSV files for `data = "file"`. Without a test file the last
    /// `test_rows` training rows are held out.
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub synthetic_dim: usize,
    pub synthetic_components: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub objective: ObjectiveKind,
    pub k: usize,
    pub m: usize,
    pub dist: String,
    pub steps: u64,
    pub batch: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: Option<f64>,
    /// SUMO clip norms; the bounds train unclipped.
    pub encoder_clip: f64,
    pub decoder_clip: f64,
    pub plateau_patience: u64,
    pub eval_k: usize,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for DensityRunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic,
            train_file: None,
            test_file: None,
            synthetic_dim: 20,
            synthetic_components: 5,
            train_rows: 2000,
            test_rows: 100,
            objective: ObjectiveKind::Sumo,
            k: 10,
            m: 5,
            dist: default_dist(),
            steps: 5000,
            batch: 16,
            latent_dim: 4,
            hidden: vec![64],
            lr: None,
            encoder_clip: 5000.0,
            decoder_clip: 20.0,
            plateau_patience: 200,
            eval_k: 5000,
            seed: 0,
            out: None,
        }
    }
}

impl DensityRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data == DataSource::File {
            need(self.train_file.is_some(), "--data file needs --train-file")?;
        }
        need(self.synthetic_dim >= 1 && self.synthetic_components >= 1, "synthetic sizes must be positive")?;
        need(self.train_rows >= 1 && self.test_rows >= 1, "row counts must be positive")?;
        need(self.k >= 1 && self.m >= 1 && self.eval_k >= 1, "--k, --m and --eval-k must be at least 1")?;
        need(self.batch >= 1, "--batch must be at least 1")?;
        need(self.latent_dim >= 1, "--latent-dim must be at least 1")?;
        need(self.hidden.iter().all(|&h| h >= 1), "hidden layer widths must be positive")?;
        need(self.lr.is_none_or(|v| v.is_finite() && v > 0.0), "--lr must be positive")?;
        need(self.plateau_patience >= 1, "plateau_patience must be at least 1")?;
        for c in [self.encoder_clip, self.decoder_clip] {
            need(c.is_finite() && c > 0.0, "clip norms must be positive")?;
        }
        parse_dist(&self.dist).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub components: usize,
    pub rows: usize,
    /// Every pixel probability of every component; random 0.1/0.9
    /// prototypes when absent.
    pub p: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            components: 5,
            rows: 10_000,
            p: None,
            seed: 0,
            out: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        need(self.dim >= 1 && self.components >= 1, "--dim and --components must be at least 1")?;
        need(self.rows >= 1, "--rows must be at least 1")?;
        need(self.p.is_none_or(|p| (0.0..=1.0).contains(&p)), "--p must lie in [0, 1]")
    }
}

/// The effective configuration of one run, tagged with its subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    ToyUnbiased(ToyConfig),
    Convergence(ConvergenceConfig),
    ReverseKl(ReverseKlRunConfig),
    Qpbo(QpboRunConfig),
    Density(DensityRunConfig),
    GenSynthetic(SyntheticConfig),
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::ToyUnbiased(_) => "toy-unbiased",
            ExperimentConfig::Convergence(_) => "convergence",
            ExperimentConfig::ReverseKl(_) => "reverse-kl",
            ExperimentConfig::Qpbo(_) => "qpbo",
            ExperimentConfig::Density(_) => "density",
            ExperimentConfig::GenSynthetic(_) => "gen-synthetic",
        }
    }

    pub fn out(&self) -> Option<&Path> {
        match self {
            ExperimentConfig::ToyUnbiased(c) => c.out.as_deref(),
            ExperimentConfig::Convergence(c) => c.out.as_deref(),
            ExperimentConfig::ReverseKl(c) => c.out.as_deref(),
            ExperimentConfig::Qpbo(c) => c.out.as_deref(),
            ExperimentConfig::Density(c) => c.out.as_deref(),
            ExperimentConfig::GenSynthetic(c) => c.out.as_deref(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::usage(format!("config does not serialize: {e}")))
    }
}

/// Reads the config file for `experiment`, or the defaults without one.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>, experiment: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if let Some(tag) = table.remove("experiment") {
        if tag.as_str() != Some(experiment) {
            return Err(CliError::usage(format!(
                "{}: config is for experiment {tag}, not `{experiment}`",
                path.display()
            )));
        }
    }
    T::deserialize(toml::Value::Table(table)).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}
