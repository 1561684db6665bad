//! Optimizers, gradient clipping and the training loops.
//!
//! Optimizers minimize. Loops that ascend an objective pass negated
//! gradients. Every per-example draw in a step uses its own stream
//! (`stream(seed, step * batch + b)`), so traces do not depend on the number
//! of worker threads.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::estimators::{iwae_grads, ladder_on_tape, parallel_draws_from, sumo_grads, sumo_on_tape};
use crate::models::{GradTarget, LatentVariableModel, ParamGroup, ParamSet, TargetDensity};
use crate::qpbo::{reinforce_grad, Policy, QpboInstance, ReinforceConfig, ReinforceState};
use crate::rng::{derive_seed, stream};
use crate::stats::{mean, median, variance};
use crate::trunc::TruncationDistribution;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Amsgrad,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// First-moment decay; unused by RMSprop (no momentum).
    pub beta1: f64,
    /// Second-moment decay (RMSprop's smoothing constant).
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    /// Amsgrad as used for density modelling.
    pub fn density() -> Self {
        Self {
            kind: OptimizerKind::Amsgrad,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-4,
        }
    }

    /// RMSprop without momentum, as used for reverse-KL fitting.
    pub fn reverse_kl() -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            lr: 5e-5,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-3,
        }
    }

    /// Adam as used for the combinatorial-optimization policies.
    pub fn policy() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0) || !beta_ok(self.beta1) || !beta_ok(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::domain(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Per-group optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    group: ParamGroup,
    lr: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    v_max: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamSet, group: ParamGroup) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Tensor> = params
            .indices(group)
            .into_iter()
            .map(|i| Tensor::zeros_like(&params.get(i).value))
            .collect();
        Ok(Self {
            config,
            group,
            lr: config.lr,
            t: 0,
            m: zeros.clone(),
            v: zeros.clone(),
            v_max: zeros,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One descent step on the optimizer's group using `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        let idx = params.indices(self.group);
        if idx.len() != grads.len() || idx.len() != self.m.len() {
            return Err(Error::shape(
                "optimizer step",
                format!("{} parameters, {} gradients", idx.len(), grads.len()),
            ));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(self.t as f64);
        let bc2 = 1.0 - c.beta2.powf(self.t as f64);
        for (j, &pi) in idx.iter().enumerate() {
            let g = grads[j].data();
            let value = params.get_mut(pi).value.data_mut();
            if value.len() != g.len() {
                return Err(Error::shape("optimizer step", format!("parameter {pi}")));
            }
            let (m, v, vmax) = (
                self.m[j].data_mut(),
                self.v[j].data_mut(),
                self.v_max[j].data_mut(),
            );
            for i in 0..g.len() {
                let gi = g[i];
                match c.kind {
                    OptimizerKind::Rmsprop => {
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        value[i] -= self.lr * gi / (v[i].sqrt() + c.eps);
                    }
                    OptimizerKind::Adam | OptimizerKind::Amsgrad => {
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                        let second = if c.kind == OptimizerKind::Amsgrad {
                            vmax[i] = vmax[i].max(v[i]);
                            vmax[i]
                        } else {
                            v[i]
                        };
                        let denom = (second / bc2).sqrt() + c.eps;
                        value[i] -= self.lr * (m[i] / bc1) / denom;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipOutcome {
    Unchanged,
    Clipped,
    /// The norm was NaN or infinite; the gradient was replaced by zeros.
    NonFinite,
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
pub fn clip_by_global_norm(grads: &mut [Tensor], max_norm: f64) -> Result<ClipOutcome> {
    if !(max_norm > 0.0) {
        return Err(Error::domain(format!("clip norm must be positive, got {max_norm}")));
    }
    Ok(sanitize(grads, Some(max_norm)))
}

/// Zeroes non-finite gradients and applies the optional clip.
pub fn sanitize(grads: &mut [Tensor], max_norm: Option<f64>) -> ClipOutcome {
    let norm = global_norm(grads);
    if !norm.is_finite() {
        for g in grads.iter_mut() {
            *g = Tensor::zeros_like(g);
        }
        return ClipOutcome::NonFinite;
    }
    match max_norm {
        Some(max) if norm > max => {
            let s = max / norm;
            for g in grads.iter_mut() {
                g.scale_in_place(s);
            }
            ClipOutcome::Clipped
        }
        _ => ClipOutcome::Unchanged,
    }
}

/// Per-group global-norm clipping; `None` disables clipping for a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipPolicy {
    pub encoder: Option<f64>,
    pub decoder: Option<f64>,
}

impl ClipPolicy {
    pub fn disabled() -> Self {
        Self {
            encoder: None,
            decoder: None,
        }
    }

    /// Encoder norm 5000 and the given decoder norm.
    pub fn sumo_density(decoder: f64) -> Self {
        Self {
            encoder: Some(5000.0),
            decoder: Some(decoder),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.encoder, self.decoder].into_iter().flatten() {
            if !(v > 0.0) {
                return Err(Error::domain(format!("clip norm must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    /// Batch mean of the objective estimate.
    pub objective: f64,
    /// Batch sample variance of the estimate.
    pub variance_proxy: f64,
    /// Steps with at least one clipped group so far, over steps so far.
    pub clip_fraction: f64,
    /// Cumulative proposal-sample evaluations.
    pub weight_evals: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_reward: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub clipped_steps: u64,
    /// Steps whose gradient was non-finite and therefore skipped.
    pub nonfinite_steps: u64,
}

impl TrainTrace {
    pub fn clip_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.clipped_steps as f64 / self.rows.len() as f64
        }
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    fn push(&mut self, mut row: TraceRow, clipped: bool) {
        if clipped {
            self.clipped_steps += 1;
        }
        row.clip_fraction = self.clipped_steps as f64 / (self.rows.len() + 1) as f64;
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergenceKind {
    /// The running median of the objective moved the wrong way by more than
    /// the tolerance over the look-back window.
    MedianWorsened { from: f64, to: f64 },
    /// A lower-bound estimate fell below the blow-up threshold.
    BiasBlowUp { estimate: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: u64,
    #[serde(flatten)]
    pub kind: DivergenceKind,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: TrainTrace,
    pub divergence: Option<Divergence>,
    pub elapsed: Duration,
}

/// Watches the running median of an objective.
#[derive(Debug, Clone)]
struct MedianWatch {
    window: VecDeque<f64>,
    medians: VecDeque<f64>,
    /// +1 when larger is better, −1 when smaller is better.
    sense: f64,
}

const MEDIAN_WINDOW: usize = 100;
const LOOKBACK: usize = 1000;
const WORSEN_NATS: f64 = 10.0;

impl MedianWatch {
    fn new(sense: f64) -> Self {
        Self {
            window: VecDeque::new(),
            medians: VecDeque::new(),
            sense,
        }
    }

    fn observe(&mut self, step: u64, value: f64) -> Option<Divergence> {
        if !value.is_finite() {
            return None;
        }
        self.window.push_back(value);
        if self.window.len() > MEDIAN_WINDOW {
            self.window.pop_front();
        }
        let med = median(self.window.make_contiguous());
        self.medians.push_back(med);
        if self.medians.len() <= LOOKBACK {
            return None;
        }
        let old = self.medians.pop_front().expect("non-empty");
        if self.sense * (old - med) > WORSEN_NATS {
            return Some(Divergence {
                step,
                kind: DivergenceKind::MedianWorsened { from: old, to: med },
                message: format!(
                    "running median of the objective moved from {old:.3} to {med:.3} over {LOOKBACK} steps"
                ),
            });
        }
        None
    }
}

/// Learning-rate decay by `factor` when a block of `patience` steps fails
/// to improve on the best block mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: u64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.8,
            patience: 200,
        }
    }
}

#[derive(Debug, Clone)]
struct Plateau {
    cfg: PlateauConfig,
    block: Vec<f64>,
    best: f64,
}

impl Plateau {
    fn new(cfg: PlateauConfig) -> Self {
        Self {
            cfg,
            block: Vec::new(),
            best: f64::NEG_INFINITY,
        }
    }

    /// Feeds one objective (larger is better); returns whether to decay.
    fn observe(&mut self, value: f64) -> bool {
        if value.is_finite() {
            self.block.push(value);
        }
        if (self.block.len() as u64) < self.cfg.patience {
            return false;
        }
        let m = mean(&self.block);
        self.block.clear();
        if m > self.best {
            self.best = m;
            false
        } else {
            true
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MleObjective {
    Sumo { m: usize, dist: TruncationDistribution },
    Iwae { k: usize },
    Elbo,
}

impl MleObjective {
    /// Expected proposal samples per example.
    pub fn expected_cost(&self) -> f64 {
        match self {
            MleObjective::Sumo { m, dist } => *m as f64 + dist.expected_terms(),
            MleObjective::Iwae { k } => *k as f64,
            MleObjective::Elbo => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub objective: MleObjective,
    pub optimizer: OptimizerConfig,
    pub clip: ClipPolicy,
    pub steps: u64,
    pub batch: usize,
    pub plateau: Option<PlateauConfig>,
    pub seed: u64,
}

struct ExampleGrads {
    estimate: f64,
    weight_evals: u64,
    decoder: Vec<Tensor>,
    encoder: Vec<Tensor>,
}

fn mean_grads(parts: impl Iterator<Item = Vec<Tensor>>, n: usize) -> Result<Vec<Tensor>> {
    let mut acc: Option<Vec<Tensor>> = None;
    for g in parts {
        match acc.as_mut() {
            None => acc = Some(g),
            Some(a) => {
                for (ai, gi) in a.iter_mut().zip(&g) {
                    ai.axpy(1.0, gi)?;
                }
            }
        }
    }
    let mut acc = acc.unwrap_or_default();
    for a in acc.iter_mut() {
        a.scale_in_place(1.0 / n as f64);
    }
    Ok(acc)
}

fn negate(grads: &mut [Tensor]) {
    for g in grads {
        g.scale_in_place(-1.0);
    }
}

struct StepUpdate {
    clipped: bool,
    nonfinite: bool,
}

/// Sanitizes and applies one update per group; `None` skips a group.
fn apply_groups(
    params: &mut ParamSet,
    dec: Option<(&mut Optimizer, Vec<Tensor>)>,
    enc: Option<(&mut Optimizer, Vec<Tensor>)>,
    clip: &ClipPolicy,
) -> Result<StepUpdate> {
    let mut up = StepUpdate {
        clipped: false,
        nonfinite: false,
    };
    for (entry, max) in [(dec, clip.decoder), (enc, clip.encoder)] {
        if let Some((opt, mut g)) = entry {
            match sanitize(&mut g, max) {
                ClipOutcome::NonFinite => {
                    up.nonfinite = true;
                    continue;
                }
                ClipOutcome::Clipped => up.clipped = true,
                ClipOutcome::Unchanged => {}
            }
            opt.step(params, &g)?;
        }
    }
    Ok(up)
}

/// Maximum-likelihood training on `data` with the chosen objective.
///
/// SUMO ascends `∇θ SUMO` and descends `∇φ SUMO²`; IWAE and ELBO ascend
/// the bound in both groups.
pub fn train_mle<M: LatentVariableModel + Sync>(
    model: &mut M,
    data: &[Vec<f64>],
    cfg: &MleConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::domain("training data is empty"));
    }
    if cfg.batch == 0 {
        return Err(Error::domain("batch must be at least 1"));
    }
    cfg.clip.validate()?;
    let start = Instant::now();
    let mut dec_opt = Optimizer::new(cfg.optimizer, model.params(), ParamGroup::Decoder)?;
    let mut enc_opt = Optimizer::new(cfg.optimizer, model.params(), ParamGroup::Encoder)?;
    let mut plateau = cfg.plateau.map(Plateau::new);
    let mut watch = MedianWatch::new(1.0);
    let mut trace = TrainTrace::default();
    let mut evals = 0u64;
    let pick_seed = derive_seed(cfg.seed, "mle/minibatch");
    let draw_seed = derive_seed(cfg.seed, "mle/estimator");

    for step in 0..cfg.steps {
        let mut pick = stream(pick_seed, step);
        let idx: Vec<usize> = (0..cfg.batch)
            .map(|_| rand::Rng::random_range(&mut pick, 0..data.len()))
            .collect();
        let frozen = &*model;
        let parts = parallel_draws_from(draw_seed, step * cfg.batch as u64, cfg.batch, |rng, b| {
            let x = &data[idx[b]];
            match &cfg.objective {
                MleObjective::Sumo { m, dist } => {
                    let g = sumo_grads(frozen, x, *m, dist, rng)?;
                    Ok(ExampleGrads {
                        estimate: g.estimate.value,
                        weight_evals: g.estimate.weight_evals,
                        decoder: g.decoder,
                        encoder: g.encoder,
                    })
                }
                MleObjective::Iwae { k } => iwae_example(frozen, x, *k, rng),
                MleObjective::Elbo => iwae_example(frozen, x, 1, rng),
            }
        })?;
        let estimates: Vec<f64> = parts.iter().map(|p| p.estimate).collect();
        evals += parts.iter().map(|p| p.weight_evals).sum::<u64>();
        let n = parts.len();
        let (dec, enc): (Vec<_>, Vec<_>) = parts.into_iter().map(|p| (p.decoder, p.encoder)).unzip();
        let mut g_dec = mean_grads(dec.into_iter(), n)?;
        let mut g_enc = mean_grads(enc.into_iter(), n)?;
        negate(&mut g_dec);
        if !matches!(cfg.objective, MleObjective::Sumo { .. }) {
            negate(&mut g_enc);
        }
        let up = apply_groups(
            model.params_mut(),
            Some((&mut dec_opt, g_dec)),
            Some((&mut enc_opt, g_enc)),
            &cfg.clip,
        )?;
        if up.nonfinite {
            trace.nonfinite_steps += 1;
        }
        let objective = mean(&estimates);
        trace.push(
            TraceRow {
                step,
                objective,
                variance_proxy: variance(&estimates),
                clip_fraction: 0.0,
                weight_evals: evals,
                best_reward: None,
            },
            up.clipped,
        );
        if let Some(p) = plateau.as_mut() {
            if p.observe(objective) {
                dec_opt.set_lr(dec_opt.lr() * p.cfg.factor);
                enc_opt.set_lr(enc_opt.lr() * p.cfg.factor);
            }
        }
        if let Some(d) = watch.observe(step, objective) {
            return Ok(TrainReport {
                trace,
                divergence: Some(d),
                elapsed: start.elapsed(),
            });
        }
    }
    Ok(TrainReport {
        trace,
        divergence: None,
        elapsed: start.elapsed(),
    })
}

fn iwae_example<M: LatentVariableModel + ?Sized>(
    model: &M,
    x: &[f64],
    k: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<ExampleGrads> {
    let (estimate, decoder, encoder) = iwae_grads(model, x, k, rng)?;
    Ok(ExampleGrads {
        estimate,
        weight_evals: k as u64,
        decoder,
        encoder,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReverseKlEstimator {
    Sumo { m: usize, dist: TruncationDistribution },
    Iwae { k: usize },
    /// Encoder ascends the IWAE bound while the decoder descends it.
    IwaeMinimax { k: usize },
}

impl ReverseKlEstimator {
    /// SUMO with expected cost `cost` under `dist`: `m = round(cost − E[K])`,
    /// at least 1.
    pub fn sumo_with_cost(cost: f64, dist: TruncationDistribution) -> Self {
        let m = (cost - dist.expected_terms()).round().max(1.0) as usize;
        ReverseKlEstimator::Sumo { m, dist }
    }

    fn is_lower_bound(&self) -> bool {
        !matches!(self, ReverseKlEstimator::Sumo { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseKlConfig {
    pub estimator: ReverseKlEstimator,
    pub optimizer: OptimizerConfig,
    pub clip: ClipPolicy,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    /// Lower-bound runs abort once the batch objective falls below this.
    pub blowup_threshold: f64,
}

/// Fits `model` to `target` by minimizing `E_{x∼p_θ}[log p_θ(x) − log p*(x)]`,
/// with `log p_θ(x)` replaced by the estimator.
///
/// `x` is drawn by reparameterized prior and decoder sampling, so the
/// θ-gradient flows through the sample path and through the estimator's
/// weights in one backward pass.
pub fn train_reverse_kl<M, T>(model: &mut M, target: &T, cfg: &ReverseKlConfig) -> Result<TrainReport>
where
    M: LatentVariableModel + Sync,
    T: TargetDensity + Sync + ?Sized,
{
    if cfg.batch == 0 {
        return Err(Error::domain("batch must be at least 1"));
    }
    if target.dim() != model.data_dim() {
        return Err(Error::shape(
            "train_reverse_kl",
            format!("target dim {} vs model data dim {}", target.dim(), model.data_dim()),
        ));
    }
    cfg.clip.validate()?;
    let start = Instant::now();
    let mut dec_opt = Optimizer::new(cfg.optimizer, model.params(), ParamGroup::Decoder)?;
    let mut enc_opt = Optimizer::new(cfg.optimizer, model.params(), ParamGroup::Encoder)?;
    let mut watch = MedianWatch::new(-1.0);
    let mut trace = TrainTrace::default();
    let mut evals = 0u64;
    let draw_seed = derive_seed(cfg.seed, "reverse-kl");

    for step in 0..cfg.steps {
        let frozen = &*model;
        let parts = parallel_draws_from(draw_seed, step * cfg.batch as u64, cfg.batch, |rng, _| {
            reverse_kl_example(frozen, target, &cfg.estimator, rng)
        })?;
        let objs: Vec<f64> = parts.iter().map(|p| p.estimate).collect();
        evals += parts.iter().map(|p| p.weight_evals).sum::<u64>();
        let n = parts.len();
        let (dec, enc): (Vec<_>, Vec<_>) = parts.into_iter().map(|p| (p.decoder, p.encoder)).unzip();
        let g_dec = mean_grads(dec.into_iter(), n)?;
        let g_enc = mean_grads(enc.into_iter(), n)?;
        let up = apply_groups(
            model.params_mut(),
            Some((&mut dec_opt, g_dec)),
            Some((&mut enc_opt, g_enc)),
            &cfg.clip,
        )?;
        if up.nonfinite {
            trace.nonfinite_steps += 1;
        }
        let objective = mean(&objs);
        trace.push(
            TraceRow {
                step,
                objective,
                variance_proxy: variance(&objs),
                clip_fraction: 0.0,
                weight_evals: evals,
                best_reward: None,
            },
            up.clipped,
        );
        if cfg.estimator.is_lower_bound() && !(objective >= cfg.blowup_threshold) {
            let d = Divergence {
                step,
                kind: DivergenceKind::BiasBlowUp {
                    estimate: objective,
                    threshold: cfg.blowup_threshold,
                },
                message: format!(
                    "bias blow-up: lower-bound objective estimate {objective:.3} fell below {}",
                    cfg.blowup_threshold
                ),
            };
            return Ok(TrainReport {
                trace,
                divergence: Some(d),
                elapsed: start.elapsed(),
            });
        }
        if let Some(d) = watch.observe(step, objective) {
            return Ok(TrainReport {
                trace,
                divergence: Some(d),
                elapsed: start.elapsed(),
            });
        }
    }
    Ok(TrainReport {
        trace,
        divergence: None,
        elapsed: start.elapsed(),
    })
}

/// Gradients are in descent convention for both groups.
fn reverse_kl_example<M, T>(
    model: &M,
    target: &T,
    estimator: &ReverseKlEstimator,
    rng: &mut dyn rand::RngCore,
) -> Result<ExampleGrads>
where
    M: LatentVariableModel + ?Sized,
    T: TargetDensity + ?Sized,
{
    let tape = Tape::new();
    let p = model.params().bind(&tape, GradTarget::Both);
    let z = model.sample_prior(&p, 1, rng)?;
    let x = model.decoder_sample(&p, z, rng)?;
    let log_target = target.log_prob(x)?.sum();
    let (est, evals) = match estimator {
        ReverseKlEstimator::Sumo { m, dist } => {
            let g = sumo_on_tape(model, &p, x, *m, dist, rng)?;
            (g.value, g.estimate.weight_evals)
        }
        ReverseKlEstimator::Iwae { k } | ReverseKlEstimator::IwaeMinimax { k } => {
            let ladder = ladder_on_tape(model, &p, x, *k, rng)?;
            (ladder.narrow(0, k - 1, 1)?.sum(), *k as u64)
        }
    };
    let obj = est.sub(log_target)?;
    let decoder = p.grads(model.params(), ParamGroup::Decoder, obj)?;
    let encoder = match estimator {
        ReverseKlEstimator::Sumo { .. } => p.grads(model.params(), ParamGroup::Encoder, est.square())?,
        ReverseKlEstimator::Iwae { .. } => p.grads(model.params(), ParamGroup::Encoder, obj)?,
        ReverseKlEstimator::IwaeMinimax { .. } => {
            p.grads(model.params(), ParamGroup::Encoder, est.neg())?
        }
    };
    Ok(ExampleGrads {
        estimate: obj.item()?,
        weight_evals: evals,
        decoder,
        encoder,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpboTrainConfig {
    pub reinforce: ReinforceConfig,
    pub optimizer: OptimizerConfig,
    pub clip: ClipPolicy,
    pub steps: u64,
    pub seed: u64,
}

/// Ascends `E[R(x)] + λ H(p_θ)` with REINFORCE. The trace's objective is
/// the batch mean reward and `best_reward` the best reward sampled so far.
pub fn train_qpbo<P: Policy + Sync>(
    policy: &mut P,
    instance: &QpboInstance,
    cfg: &QpboTrainConfig,
) -> Result<TrainReport> {
    cfg.clip.validate()?;
    let start = Instant::now();
    let mut dec_opt = Optimizer::new(cfg.optimizer, policy.params(), ParamGroup::Decoder)?;
    let mut enc_opt = Optimizer::new(cfg.optimizer, policy.params(), ParamGroup::Encoder)?;
    let mut state = ReinforceState::default();
    let mut trace = TrainTrace::default();
    let mut best = f64::NEG_INFINITY;
    let mut evals = 0u64;
    let seed = derive_seed(cfg.seed, "qpbo");
    for step in 0..cfg.steps {
        let out = reinforce_grad(&*policy, instance, &cfg.reinforce, &mut state, seed, step)?;
        best = best.max(out.best_reward);
        evals += out.weight_evals;
        let mut g_dec = out.decoder;
        let g_enc = out.encoder;
        negate(&mut g_dec);
        let has_enc = !g_enc.is_empty();
        let up = apply_groups(
            policy.params_mut(),
            Some((&mut dec_opt, g_dec)),
            has_enc.then_some((&mut enc_opt, g_enc)),
            &cfg.clip,
        )?;
        if up.nonfinite {
            trace.nonfinite_steps += 1;
        }
        trace.push(
            TraceRow {
                step,
                objective: out.mean_reward,
                variance_proxy: out.reward_variance,
                clip_fraction: 0.0,
                weight_evals: evals,
                best_reward: Some(best),
            },
            up.clipped,
        );
    }
    Ok(TrainReport {
        trace,
        divergence: None,
        elapsed: start.elapsed(),
    })
}
