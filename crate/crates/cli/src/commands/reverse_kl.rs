use serde::{Deserialize, Serialize};
use sumo_core::models::{FunnelTarget, MlpVae, MlpVaeConfig, ObservationKind, TargetDensity};
use sumo_core::rng::{derive_seed, stream};
use sumo_core::stats::mean;
use sumo_core::training::{
    train_reverse_kl, ClipPolicy, Divergence, OptimizerConfig, ReverseKlConfig, ReverseKlEstimator,
};

use super::write_training_trace;
use crate::config::{parse_dist, EstimatorKind, ReverseKlRunConfig, TargetKind};
use crate::error::Result;
use crate::output::OutputDir;

/// Steps averaged for `final_objective`.
pub const FINAL_WINDOW: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseKlSummary {
    pub estimator: ReverseKlEstimator,
    pub expected_weight_evals: f64,
    pub steps_completed: u64,
    /// Mean objective over the last `FINAL_WINDOW` completed steps.
    pub final_objective: Option<f64>,
    pub min_objective: Option<f64>,
    pub clip_fraction: f64,
    pub nonfinite_steps: u64,
    pub divergence: Option<Divergence>,
}

pub fn estimator(cfg: &ReverseKlRunConfig) -> Result<ReverseKlEstimator> {
    let k = cfg.expected_cost.round() as usize;
    Ok(match cfg.estimator {
        EstimatorKind::Sumo => ReverseKlEstimator::sumo_with_cost(cfg.expected_cost, parse_dist(&cfg.dist)?),
        EstimatorKind::Iwae => ReverseKlEstimator::Iwae { k },
        EstimatorKind::IwaeMinimax => ReverseKlEstimator::IwaeMinimax { k },
    })
}

pub fn run(cfg: &ReverseKlRunConfig, out: &OutputDir) -> Result<ReverseKlSummary> {
    let target = match cfg.target {
        TargetKind::Funnel => FunnelTarget::default(),
    };
    let vae_cfg = MlpVaeConfig {
        data_dim: target.dim(),
        latent_dim: cfg.latent_dim,
        hidden: cfg.hidden.clone(),
        observation: ObservationKind::Gaussian,
    };
    let mut model = MlpVae::new(vae_cfg, &mut stream(derive_seed(cfg.seed, "reverse-kl/init"), 0))?;
    let estimator = estimator(cfg)?;
    let expected_weight_evals = match &estimator {
        ReverseKlEstimator::Sumo { m, dist } => *m as f64 + dist.expected_terms(),
        ReverseKlEstimator::Iwae { k } | ReverseKlEstimator::IwaeMinimax { k } => *k as f64,
    };
    let mut optimizer = OptimizerConfig::reverse_kl();
    if let Some(lr) = cfg.lr {
        optimizer.lr = lr;
    }
    let train = ReverseKlConfig {
        estimator: estimator.clone(),
        optimizer,
        clip: ClipPolicy {
            encoder: cfg.encoder_clip,
            decoder: cfg.decoder_clip,
        },
        steps: cfg.steps,
        batch: cfg.batch,
        seed: cfg.seed,
        blowup_threshold: cfg.blowup_threshold,
    };
    let report = train_reverse_kl(&mut model, &target, &train)?;
    write_training_trace(out, &report.trace)?;
    model.to_checkpoint(cfg.seed).save(&out.file("checkpoint.json"))?;

    let objs = report.trace.objectives();
    let tail = &objs[objs.len().saturating_sub(FINAL_WINDOW)..];
    Ok(ReverseKlSummary {
        estimator,
        expected_weight_evals,
        steps_completed: objs.len() as u64,
        final_objective: (!tail.is_empty()).then(|| mean(tail)),
        min_objective: objs.iter().copied().reduce(f64::min),
        clip_fraction: report.trace.clip_fraction(),
        nonfinite_steps: report.trace.nonfinite_steps,
        divergence: report.divergence,
    })
}
