use serde::{Deserialize, Serialize};
use sumo_core::data::{load_binary_csv, BernoulliMixture};
use sumo_core::estimators::{iwae_estimate, parallel_draws};
use sumo_core::models::{MlpVae, MlpVaeConfig, ObservationKind};
use sumo_core::rng::{derive_seed, stream};
use sumo_core::stats::mean_se;
use sumo_core::training::{
    train_mle, ClipPolicy, Divergence, MleConfig, MleObjective, OptimizerConfig, PlateauConfig,
};

use super::write_training_trace;
use crate::config::{parse_dist, DataSource, DensityRunConfig, ObjectiveKind};
use crate::error::{CliError, Result};
use crate::output::OutputDir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub objective: MleObjective,
    pub expected_weight_evals: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub steps_completed: u64,
    pub clip_fraction: f64,
    pub eval_k: usize,
    /// Mean `IWAE_{eval_k}` over the test rows, with its standard error.
    pub test_log_likelihood: f64,
    pub test_log_likelihood_se: f64,
    /// Exact mean test log-likelihood under the generating mixture.
    pub true_test_log_likelihood: Option<f64>,
    pub divergence: Option<Divergence>,
}

struct Dataset {
    train: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
    mixture: Option<BernoulliMixture>,
}

fn dataset(cfg: &DensityRunConfig) -> Result<Dataset> {
    match cfg.data {
        DataSource::Synthetic => {
            let mix = BernoulliMixture::random(
                cfg.synthetic_dim,
                cfg.synthetic_components,
                derive_seed(cfg.seed, "density/mixture"),
            )?;
            Ok(Dataset {
                train: mix.sample(cfg.train_rows, derive_seed(cfg.seed, "density/train")),
                test: mix.sample(cfg.test_rows, derive_seed(cfg.seed, "density/test")),
                mixture: Some(mix),
            })
        }
        DataSource::File => {
            let path = cfg.train_file.as_deref().ok_or_else(|| CliError::usage("--data file needs --train-file"))?;
            let mut train = load_binary_csv(path)?;
            let test = match &cfg.test_file {
                Some(p) => load_binary_csv(p)?,
                None => {
                    if train.len() <= cfg.test_rows {
                        return Err(CliError::BadInput {
                            path: path.to_path_buf(),
                            message: format!("{} rows leave nothing to train on after holding out {}", train.len(), cfg.test_rows),
                        });
                    }
                    train.split_off(train.len() - cfg.test_rows)
                }
            };
            if test[0].len() != train[0].len() {
                return Err(CliError::usage(format!(
                    "train rows have {} columns, test rows {}",
                    train[0].len(),
                    test[0].len()
                )));
            }
            Ok(Dataset {
                train,
                test,
                mixture: None,
            })
        }
    }
}

pub fn run(cfg: &DensityRunConfig, out: &OutputDir) -> Result<DensitySummary> {
    let data = dataset(cfg)?;
    let vae_cfg = MlpVaeConfig {
        data_dim: data.train[0].len(),
        latent_dim: cfg.latent_dim,
        hidden: cfg.hidden.clone(),
        observation: ObservationKind::Bernoulli,
    };
    let mut model = MlpVae::new(vae_cfg, &mut stream(derive_seed(cfg.seed, "density/init"), 0))?;
    let (objective, clip) = match cfg.objective {
        ObjectiveKind::Sumo => (
            MleObjective::Sumo {
                m: cfg.m,
                dist: parse_dist(&cfg.dist)?,
            },
            ClipPolicy {
                encoder: Some(cfg.encoder_clip),
                decoder: Some(cfg.decoder_clip),
            },
        ),
        ObjectiveKind::Iwae => (MleObjective::Iwae { k: cfg.k }, ClipPolicy::disabled()),
        ObjectiveKind::Elbo => (MleObjective::Elbo, ClipPolicy::disabled()),
    };
    let mut optimizer = OptimizerConfig::density();
    if let Some(lr) = cfg.lr {
        optimizer.lr = lr;
    }
    let train_cfg = MleConfig {
        objective: objective.clone(),
        optimizer,
        clip,
        steps: cfg.steps,
        batch: cfg.batch,
        plateau: Some(PlateauConfig {
            patience: cfg.plateau_patience,
            ..Default::default()
        }),
        seed: cfg.seed,
    };
    let report = train_mle(&mut model, &data.train, &train_cfg)?;
    write_training_trace(out, &report.trace)?;
    model.to_checkpoint(cfg.seed).save(&out.file("checkpoint.json"))?;

    let test = &data.test;
    let evals = parallel_draws(derive_seed(cfg.seed, "density/eval"), test.len(), |rng, i| {
        iwae_estimate(&model, &test[i], cfg.eval_k, rng)
    })?;
    let ll = mean_se(&evals);
    Ok(DensitySummary {
        expected_weight_evals: objective.expected_cost(),
        objective,
        train_rows: data.train.len(),
        test_rows: test.len(),
        steps_completed: report.trace.rows.len() as u64,
        clip_fraction: report.trace.clip_fraction(),
        eval_k: cfg.eval_k,
        test_log_likelihood: ll.mean,
        test_log_likelihood_se: ll.se,
        true_test_log_likelihood: data
            .mixture
            .map(|m| test.iter().map(|x| m.log_prob(x)).sum::<f64>() / test.len() as f64),
        divergence: report.divergence,
    })
}
