use serde::{Deserialize, Serialize};
use sumo_core::qpbo::{
    AutoregressivePolicy, IndependentPolicy, LatentPolicy, Policy, QpboInstance, ReinforceConfig,
    EXACT_MAX_DIM,
};
use sumo_core::rng::{derive_seed, stream};
use sumo_core::stats::mean;
use sumo_core::training::{train_qpbo, ClipPolicy, OptimizerConfig, QpboTrainConfig, TrainReport};

use crate::config::{parse_dist, PolicyKind, QpboRunConfig};
use crate::error::Result;
use crate::output::{num, opt_num, schema, OutputDir};

/// Steps averaged for `final_mean_reward`.
pub const FINAL_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpboSummary {
    pub d: usize,
    pub policy: PolicyKind,
    pub mean_random_reward: f64,
    pub best_reward: Option<f64>,
    pub final_mean_reward: Option<f64>,
    pub total_weight_evals: u64,
    /// Present when the exact optimum was computed.
    pub r_star: Option<f64>,
    pub normalized_gap: Option<f64>,
    pub oracle_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub schema: String,
    pub x_star: Vec<f64>,
    pub r_star: f64,
    pub mean_random_reward: f64,
    /// `(best_so_far − mean_random)/(R* − mean_random)` after each step.
    pub normalized_gap_curve: Vec<f64>,
}

/// `(best − mean_random)/(R* − mean_random)`; 1 when every assignment
/// scores the same in expectation as the optimum.
pub fn normalized_gap(best: f64, mean_random: f64, r_star: f64) -> f64 {
    let span = r_star - mean_random;
    if span > 0.0 {
        (best - mean_random) / span
    } else {
        1.0
    }
}

fn train<P: Policy + Sync>(mut policy: P, inst: &QpboInstance, cfg: &QpboTrainConfig) -> Result<TrainReport> {
    Ok(train_qpbo(&mut policy, inst, cfg)?)
}

pub fn run(cfg: &QpboRunConfig, out: &OutputDir) -> Result<QpboSummary> {
    let inst = match &cfg.instance {
        Some(path) => QpboInstance::load(path)?,
        None => QpboInstance::random(cfg.d, derive_seed(cfg.seed, "qpbo/instance")),
    };
    let d = inst.dim();
    inst.save(&out.file("instance.json"))?;

    let mut optimizer = OptimizerConfig::policy();
    if let Some(lr) = cfg.lr {
        optimizer.lr = lr;
    }
    let train_cfg = QpboTrainConfig {
        reinforce: ReinforceConfig {
            batch: cfg.batch,
            lambda: cfg.lambda,
            m: cfg.m,
            dist: parse_dist(&cfg.dist)?,
            ..Default::default()
        },
        optimizer,
        clip: ClipPolicy::disabled(),
        steps: cfg.steps,
        seed: cfg.seed,
    };
    let mut rng = stream(derive_seed(cfg.seed, "qpbo/init"), 0);
    let report = match cfg.policy {
        PolicyKind::Indep => train(IndependentPolicy::new(d), &inst, &train_cfg)?,
        PolicyKind::Autoreg => train(AutoregressivePolicy::new(d, cfg.ar_hidden, &mut rng)?, &inst, &train_cfg)?,
        PolicyKind::Latent => train(LatentPolicy::new(d, cfg.latent_dim, cfg.hidden.clone(), &mut rng)?, &inst, &train_cfg)?,
    };
    let rows = &report.trace.rows;
    out.write_csv(
        "trace.csv",
        "qpbo-trace",
        &["step", "mean_reward", "best_reward"],
        rows.iter().map(|r| vec![r.step.to_string(), num(r.objective), opt_num(r.best_reward)]),
    )?;

    let mean_random = inst.mean_random_reward();
    let best = rows.last().and_then(|r| r.best_reward);
    let objs = report.trace.objectives();
    let tail = &objs[objs.len().saturating_sub(FINAL_WINDOW)..];
    let mut summary = QpboSummary {
        d,
        policy: cfg.policy,
        mean_random_reward: mean_random,
        best_reward: best,
        final_mean_reward: (!tail.is_empty()).then(|| mean(tail)),
        total_weight_evals: rows.last().map_or(0, |r| r.weight_evals),
        r_star: None,
        normalized_gap: None,
        oracle_skipped: None,
    };
    if cfg.oracle {
        if d > EXACT_MAX_DIM {
            let why = format!("exact optimum needs d <= {EXACT_MAX_DIM}, instance has d = {d}");
            eprintln!("warning: {why}; oracle.json not written");
            summary.oracle_skipped = Some(why);
        } else {
            let (x_star, r_star) = inst.exact_max()?;
            let curve: Vec<f64> = rows
                .iter()
                .map(|r| normalized_gap(r.best_reward.unwrap_or(mean_random), mean_random, r_star))
                .collect();
            summary.r_star = Some(r_star);
            summary.normalized_gap = curve.last().copied();
            out.write_json(
                "oracle.json",
                &OracleReport {
                    schema: schema("qpbo-oracle"),
                    x_star,
                    r_star,
                    mean_random_reward: mean_random,
                    normalized_gap_curve: curve,
                },
            )?;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_is_zero_at_random_and_one_at_optimum() {
        assert_eq!(normalized_gap(-1.0, -1.0, 3.0), 0.0);
        assert_eq!(normalized_gap(3.0, -1.0, 3.0), 1.0);
        assert_eq!(normalized_gap(1.0, -1.0, 3.0), 0.5);
        assert_eq!(normalized_gap(2.0, 2.0, 2.0), 1.0);
    }
}
