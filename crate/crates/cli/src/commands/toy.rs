use serde::{Deserialize, Serialize};
use sumo_core::estimators::{iwae_estimate, parallel_draws, sumo_grad_decoder};
use sumo_core::rng::derive_seed;
use sumo_core::stats::{mean, mean_se};

use super::toy_problem;
use crate::config::{parse_dist, ToyConfig};
use crate::error::Result;
use crate::output::{num, OutputDir};

/// Bound size of the biased comparison estimator.
pub const IWAE_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
    pub analytic_logp: f64,
    pub sumo_mean: f64,
    pub sumo_se: f64,
    pub iwae5_mean: f64,
    pub iwae5_se: f64,
    /// Per coordinate of θ: mean and standard error of `∇θ SUMO`, and the
    /// closed-form score `(x − θ)/2`.
    pub grad_mean: Vec<f64>,
    pub grad_se: Vec<f64>,
    pub grad_analytic: Vec<f64>,
    pub mean_k_sampled: f64,
    pub mean_weight_evals: f64,
    pub nonfinite_draws: usize,
}

pub fn run(cfg: &ToyConfig, out: &OutputDir) -> Result<ToySummary> {
    let dist = parse_dist(&cfg.dist)?;
    let (model, x) = toy_problem(cfg.dim, cfg.perturb, cfg.seed)?;
    let analytic_logp = model.analytic_logp(&x)?;

    let draws = parallel_draws(derive_seed(cfg.seed, "toy/sumo"), cfg.trials, |rng, _| {
        sumo_grad_decoder(&model, &x, cfg.m, &dist, rng)
    })?;
    let iwae = parallel_draws(derive_seed(cfg.seed, "toy/iwae"), cfg.trials, |rng, _| {
        iwae_estimate(&model, &x, IWAE_K, rng)
    })?;

    let values: Vec<f64> = draws.iter().map(|d| d.estimate.value).collect();
    let sumo = mean_se(&values);
    let iw = mean_se(&iwae);
    let (grad_mean, grad_se) = (0..cfg.dim)
        .map(|j| {
            let g: Vec<f64> = draws.iter().map(|d| d.grads[0].data()[j]).collect();
            let s = mean_se(&g);
            (s.mean, s.se)
        })
        .unzip();
    let ks: Vec<f64> = draws.iter().map(|d| d.estimate.k_sampled as f64).collect();
    let evals: Vec<f64> = draws.iter().map(|d| d.estimate.weight_evals as f64).collect();

    out.write_csv(
        "draws.csv",
        "toy-draws",
        &["draw", "value", "k_sampled", "weight_evals"],
        draws.iter().enumerate().map(|(i, d)| {
            vec![
                i.to_string(),
                num(d.estimate.value),
                d.estimate.k_sampled.to_string(),
                d.estimate.weight_evals.to_string(),
            ]
        }),
    )?;

    Ok(ToySummary {
        theta: model.theta().to_vec(),
        grad_analytic: model.analytic_score(&x),
        x,
        analytic_logp,
        sumo_mean: sumo.mean,
        sumo_se: sumo.se,
        iwae5_mean: iw.mean,
        iwae5_se: iw.se,
        grad_mean,
        grad_se,
        mean_k_sampled: mean(&ks),
        mean_weight_evals: mean(&evals),
        nonfinite_draws: draws.iter().filter(|d| !d.finite).count(),
    })
}
