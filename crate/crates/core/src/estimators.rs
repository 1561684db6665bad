//! Russian roulette, IWAE and SUMO, plus the gradient estimators built on them.
//!
//! SUMO with `m` guaranteed terms is
//!
//! ```text
//! SUMO(x) = IWAE_m(x) + Σ_{i=1}^{K} (IWAE_{m+i} - IWAE_{m+i-1}) / P(K ≥ i),   K ~ p(K)
//! ```
//!
//! so the `i`-th tail term is weighted by the survival probability at `i`,
//! whatever `m` is. One estimate draws exactly `m + K` proposal samples and
//! builds a single cumulative ladder from them.
//!
//! Every function that takes an RNG draws `K` first and the proposal noise
//! second, so a fixed seed fixes both.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::models::{standard_normal_var, BoundParams, GradTarget, LatentVariableModel, ParamGroup};
use crate::numerics::{iwae_ladder, LogWeightLadder};
use crate::rng::{stream, SumoRng};
use crate::trunc::TruncationDistribution;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouletteEstimate {
    pub value: f64,
    pub k_sampled: u64,
    pub terms_computed: u64,
}

/// `Σ_{k=1}^{K} term(k) / P(K ≥ k)` with `K ~ dist`.
///
/// Unbiased for `Σ_k term(k)` whenever that series converges absolutely.
pub fn russian_roulette(
    mut term: impl FnMut(u64) -> f64,
    dist: &TruncationDistribution,
    rng: &mut dyn RngCore,
) -> Result<RouletteEstimate> {
    dist.require_full_support()?;
    let k = dist.sample(rng);
    let mut value = 0.0;
    for i in 1..=k {
        value += term(i) / dist.survival(i)?;
    }
    Ok(RouletteEstimate {
        value,
        k_sampled: k,
        terms_computed: k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumoEstimate {
    pub value: f64,
    pub k_sampled: u64,
    /// Proposal samples drawn, `m + K`.
    pub weight_evals: u64,
    pub base_iwae_m: f64,
    /// `i`-th entry is `Δ_{m+i-1} / P(K ≥ i)`.
    pub term_contributions: Vec<f64>,
}

impl SumoEstimate {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// A SUMO draw recorded on a tape.
pub struct SumoGraph<'t> {
    /// Scalar whose value is the estimate and whose gradient is the SUMO
    /// gradient.
    pub value: Var<'t>,
    pub estimate: SumoEstimate,
}

fn row<'t>(tape: &'t Tape, x: &[f64]) -> Var<'t> {
    tape.constant(Tensor::row(x.to_vec()))
}

fn check_x<M: LatentVariableModel + ?Sized>(model: &M, x: &[f64]) -> Result<()> {
    if x.len() != model.data_dim() {
        return Err(Error::shape(
            "estimator input",
            format!("x has {} entries, model expects {}", x.len(), model.data_dim()),
        ));
    }
    Ok(())
}

/// `IWAE_1 .. IWAE_n` on the tape from `n` fresh proposal samples.
pub fn ladder_on_tape<'t, M: LatentVariableModel + ?Sized>(
    model: &M,
    p: &BoundParams<'t>,
    x: Var<'t>,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Var<'t>> {
    let tape = x.tape();
    let eps = standard_normal_var(tape, n, model.latent_dim(), rng)?;
    let lw = model.log_weights(p, x, eps)?;
    let log_k = tape.constant(Tensor::vector((1..=n).map(|k| (k as f64).ln()).collect()));
    lw.log_cumsum_exp()?.sub(log_k)
}

/// One SUMO draw on the tape. `x` may itself depend on parameters.
pub fn sumo_on_tape<'t, M: LatentVariableModel + ?Sized>(
    model: &M,
    p: &BoundParams<'t>,
    x: Var<'t>,
    m: usize,
    dist: &TruncationDistribution,
    rng: &mut dyn RngCore,
) -> Result<SumoGraph<'t>> {
    if m == 0 {
        return Err(Error::domain("SUMO needs m >= 1"));
    }
    dist.require_full_support()?;
    let k = dist.sample(rng);
    let ku = usize::try_from(k).map_err(|_| Error::domain("sampled K does not fit in memory"))?;
    let n = m + ku;
    let ladder = ladder_on_tape(model, p, x, n, rng)?;

    let l = ladder.value();
    let l = l.data();
    let mut coef = vec![0.0; n];
    coef[m - 1] = 1.0;
    let mut contributions = Vec::with_capacity(ku);
    for i in 1..=ku {
        let w = 1.0 / dist.survival(i as u64)?;
        coef[m + i - 1] += w;
        coef[m + i - 2] -= w;
        contributions.push((l[m + i - 1] - l[m + i - 2]) * w);
    }
    let base = l[m - 1];
    let estimate = SumoEstimate {
        value: base + contributions.iter().sum::<f64>(),
        k_sampled: k,
        weight_evals: n as u64,
        base_iwae_m: base,
        term_contributions: contributions,
    };
    let value = ladder.mul(x.tape().constant(Tensor::vector(coef)))?.sum();
    Ok(SumoGraph { value, estimate })
}

/// One SUMO draw for a fixed observation.
pub fn sumo<M: LatentVariableModel + ?Sized>(
    model: &M,
    x: &[f64],
    m: usize,
    dist: &TruncationDistribution,
    rng: &mut dyn RngCore,
) -> Result<SumoEstimate> {
    check_x(model, x)?;
    let tape = Tape::new();
    let p = model.params().bind(&tape, GradTarget::None);
    Ok(sumo_on_tape(model, &p, row(&tape, x), m, dist, rng)?.estimate)
}

/// The full ladder of `n` fresh log-weights for `x`.
pub fn sample_ladder<M: LatentVariableModel + ?Sized>(
    model: &M,
    x: &[f64],
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<LogWeightLadder> {
    check_x(model, x)?;
    if n == 0 {
        return Err(Error::domain("ladder needs at least one sample"));
    }
    let tape = Tape::new();
    let p = model.params().bind(&tape, GradTarget::None);
    let eps = standard_normal_var(&tape, n, model.latent_dim(), rng)?;
    let lw = model.log_weights(&p, row(&tape, x), eps)?;
    let ladder = iwae_ladder(lw.value().data())?;
    Ok(ladder)
}

/// `IWAE_k(x)` from `k` fresh samples; `k = 1` is the single-sample ELBO.
pub fn iwae_estimate<M: LatentVariableModel + ?Sized>(
    model: &M,
    x: &[f64],
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("IWAE needs k >= 1"));
    }
    Ok(sample_ladder(model, x, k, rng)?.iwae_at(k))
}

/// Gradients from one estimator draw, aligned with the parameters of the
/// requested groups in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub estimate: SumoEstimate,
    pub grads: Vec<Tensor>,
    /// False if the estimate or any gradient entry is NaN or infinite.
    pub finite: bool,
}

/// Both SUMO gradients from one draw: `∇θ SUMO` and `∇φ SUMO²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumoGrads {
    pub estimate: SumoEstimate,
    pub decoder: Vec<Tensor>,
    pub encoder: Vec<Tensor>,
    pub finite: bool,
}

fn all_finite(value: f64, grads: &[Tensor]) -> bool {
    value.is_finite() && grads.iter().all(Tensor::is_finite)
}

/// `∇θ SUMO(x)`; its expectation is the score `∇θ log p_θ(x)`.
pub fn sumo_grad_decoder<M: LatentVariableModel + ?Sized>(
    model: &M,
    x: &[f64],
    m: usize,
    dist: &TruncationDistribution,
    rng: &mut dyn RngCore,
) -> Result<GradEstimate> {
    check_x(model, x)?;
    let tape = Tape::new();
    let p = model.params().bind(&tape, GradTarget::Decoder);
    let g = sumo_on_tape(model, &p, row(&tape, x), m, dist, rng)?;
    let grads = p.grads(model.params(), ParamGroup::Decoder, g.value)?;
    Ok(GradEstimate {
        finite: all_finite(g.estimate.value, &grads),
        estimate: g.estimate,
        grads,
    })
}

/// `∇φ SUMO(x)²`. Since `E[SUMO]` does not depend on φ, its expectation is
/// `∇φ Var[SUMO(x)]`.
pub fn encoder_variance_grad<M: LatentVariableModel + ?Sized>(
    model: &M,
    x: &[f64],
    m: usize,
    dist: &TruncationDistribution,
    rng: &mut dyn RngCore,
) -> Result<GradEstimate> {
    check_x(model, x)?;
    let tape = Tape::new();
    let p = model.params().bind(&tape, GradTarget::Encoder);
    let g = sumo_on_tape(model, &p, row(&tape, x), m, dist, rng)?;
    let grads = p.grads(model.params(), ParamGroup::Encoder, g.value.square())?;
    Ok(GradEstimate {
        finite: all_finite(g.estimate.value, &grads),
        estimate: g.estimate,
        grads,
    })
}

/// Decoder and encoder gradients sharing one SUMO draw.
pub fn sumo_grads<M: LatentVariableModel + ?Sized>(
    model: &M,
    x: &[f64],
    m: usize,
    dist: &TruncationDistribution,
    rng: &mut dyn RngCore,
) -> Result<SumoGrads> {
    check_x(model, x)?;
    let tape = Tape::new();
    let p = model.params().bind(&tape, GradTarget::Both);
    let g = sumo_on_tape(model, &p, row(&tape, x), m, dist, rng)?;
    let decoder = p.grads(model.params(), ParamGroup::Decoder, g.value)?;
    let encoder = p.grads(model.params(), ParamGroup::Encoder, g.value.square())?;
    Ok(SumoGrads {
        finite: all_finite(g.estimate.value, &decoder) && all_finite(0.0, &encoder),
        estimate: g.estimate,
        decoder,
        encoder,
    })
}

/// `IWAE_k(x)` with gradients for both parameter groups (the usual IWAE
/// objective, which both groups ascend).
pub fn iwae_grads<M: LatentVariableModel + ?Sized>(
    model: &M,
    x: &[f64],
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
    check_x(model, x)?;
    if k == 0 {
        return Err(Error::domain("IWAE needs k >= 1"));
    }
    let tape = Tape::new();
    let p = model.params().bind(&tape, GradTarget::Both);
    let ladder = ladder_on_tape(model, &p, row(&tape, x), k, rng)?;
    let top = ladder.narrow(0, k - 1, 1)?.sum();
    let dec = p.grads(model.params(), ParamGroup::Decoder, top)?;
    let enc = p.grads(model.params(), ParamGroup::Encoder, top)?;
    Ok((top.item()?, dec, enc))
}

/// Runs `f` for draws `0..n`, each with its own stream of `seed`, and
/// returns the results in draw order. Independent of the thread count.
pub fn parallel_draws<T, F>(seed: u64, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut SumoRng, usize) -> Result<T> + Sync,
{
    parallel_draws_from(seed, 0, n, f)
}

/// As [`parallel_draws`], with draw `i` using stream `first_stream + i`.
pub fn parallel_draws_from<T, F>(seed: u64, first_stream: u64, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut SumoRng, usize) -> Result<T> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, first_stream + i as u64);
            f(&mut rng, i)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub k: usize,
    /// Mean of `Δk²`.
    pub delta_sq: f64,
    /// Mean of `‖∇θ Δk‖²`.
    pub grad_delta_sq: f64,
    /// Mean of `Δk Δ_{k+gap}`, when `k + gap ≤ k_max`.
    pub cross_term: Option<f64>,
}

/// Moments of the ladder differences `Δk = IWAE_{k+1} - IWAE_k` for
/// `k = 1..=k_max`, each trial using one ladder of `k_max + 1` samples and
/// its own stream of `seed`.
pub fn delta_moments<M: LatentVariableModel + Sync + ?Sized>(
    model: &M,
    x: &[f64],
    k_max: usize,
    trials: usize,
    gap: usize,
    seed: u64,
) -> Result<Vec<MomentRow>> {
    check_x(model, x)?;
    if k_max < 1 || trials == 0 {
        return Err(Error::domain("delta_moments needs k_max >= 1 and trials >= 1"));
    }
    let per_trial = parallel_draws(seed, trials, |rng, _| {
        let tape = Tape::new();
        let p = model.params().bind(&tape, GradTarget::Decoder);
        let ladder = ladder_on_tape(model, &p, row(&tape, x), k_max + 1, rng)?;
        let values = ladder.value().data().to_vec();
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(k_max + 1);
        for j in 0..=k_max {
            let gj = p.grads(model.params(), ParamGroup::Decoder, ladder.narrow(0, j, 1)?.sum())?;
            grads.push(gj.into_iter().flat_map(Tensor::into_data).collect());
        }
        let deltas: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        let grad_sq: Vec<f64> = grads
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        Ok((deltas, grad_sq))
    })?;
    let t = trials as f64;
    Ok((1..=k_max)
        .map(|k| {
            let i = k - 1;
            let delta_sq = per_trial.iter().map(|(d, _)| d[i] * d[i]).sum::<f64>() / t;
            let grad_delta_sq = per_trial.iter().map(|(_, g)| g[i]).sum::<f64>() / t;
            let cross_term = (gap > 0 && k + gap <= k_max)
                .then(|| per_trial.iter().map(|(d, _)| d[i] * d[i + gap]).sum::<f64>() / t);
            MomentRow {
                k,
                delta_sq,
                grad_delta_sq,
                cross_term,
            }
        })
        .collect())
}
