//! Quadratic pseudo-Boolean optimization.
//!
//! `R(x) = Σ_i w_i(x_i) + Σ_{i<j} w_ij(x_i, x_j)` over `x ∈ {0,1}^d`, an
//! exhaustive oracle for small `d`, and the policies trained by REINFORCE:
//! independent Bernoulli, autoregressive, and a latent-variable policy whose
//! `log p(x)` is estimated with SUMO.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::estimators::{parallel_draws_from, sumo, sumo_on_tape};
use crate::models::{
    BoundParams, GradTarget, LatentVariableModel, MlpVae, MlpVaeConfig, ObservationKind,
    ParamGroup, ParamSet,
};
use crate::rng::stream;
use crate::stats::{mean, variance};
use crate::trunc::TruncationDistribution;
use crate::{Error, Result};

/// Largest `d` the exhaustive oracle accepts.
pub const EXACT_MAX_DIM: usize = 24;

/// `(j, table, i_is_first)` for one pairwise term touching variable `i`.
type Neighbor = (usize, [[f64; 2]; 2], bool);

#[derive(Debug, Clone, PartialEq)]
pub struct QpboInstance {
    d: usize,
    unary: Vec<[f64; 2]>,
    pairwise: BTreeMap<(usize, usize), [[f64; 2]; 2]>,
    seed: Option<u64>,
}

pub const INSTANCE_SCHEMA: &str = "qpbo-instance/v1";

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    #[serde(default)]
    schema: Option<String>,
    d: usize,
    seed: Option<u64>,
    unary: Vec<[f64; 2]>,
    pairwise: BTreeMap<String, [[f64; 2]; 2]>,
}

impl QpboInstance {
    pub fn new(
        d: usize,
        unary: Vec<[f64; 2]>,
        pairwise: BTreeMap<(usize, usize), [[f64; 2]; 2]>,
    ) -> Result<Self> {
        if unary.len() != d {
            return Err(Error::shape("QpboInstance", format!("{} unary tables for d = {d}", unary.len())));
        }
        for &(i, j) in pairwise.keys() {
            if !(i < j && j < d) {
                return Err(Error::domain(format!("pair ({i}, {j}) is not i < j < {d}")));
            }
        }
        let finite = unary.iter().flatten().all(|v| v.is_finite())
            && pairwise.values().flatten().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("QPBO tables must be finite"));
        }
        Ok(Self {
            d,
            unary,
            pairwise,
            seed: None,
        })
    }

    /// Dense instance with every table entry uniform on `[-1, 1]`. Unary
    /// tables are drawn first, then pairs in lexicographic order.
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = stream(seed, 0);
        let mut u = || rng.random_range(-1.0..=1.0);
        let unary = (0..d).map(|_| [u(), u()]).collect();
        let mut pairwise = BTreeMap::new();
        for i in 0..d {
            for j in i + 1..d {
                pairwise.insert((i, j), [[u(), u()], [u(), u()]]);
            }
        }
        Self {
            d,
            unary,
            pairwise,
            seed: Some(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn unary(&self) -> &[[f64; 2]] {
        &self.unary
    }

    pub fn pairwise(&self) -> &BTreeMap<(usize, usize), [[f64; 2]; 2]> {
        &self.pairwise
    }

    fn bits(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.d {
            return Err(Error::shape("reward", format!("x has {} entries, d = {}", x.len(), self.d)));
        }
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::domain(format!("x[{i}] = {v} is not binary")))
                }
            })
            .collect()
    }

    pub fn reward(&self, x: &[f64]) -> Result<f64> {
        let b = self.bits(x)?;
        Ok(self.reward_bits(&b))
    }

    fn reward_bits(&self, b: &[usize]) -> f64 {
        let mut r: f64 = self.unary.iter().zip(b).map(|(t, &v)| t[v]).sum();
        for (&(i, j), t) in &self.pairwise {
            r += t[b[i]][b[j]];
        }
        r
    }

    /// `E[R(x)]` for `x` uniform on `{0,1}^d`.
    pub fn mean_random_reward(&self) -> f64 {
        let u: f64 = self.unary.iter().map(|t| 0.5 * (t[0] + t[1])).sum();
        let p: f64 = self
            .pairwise
            .values()
            .map(|t| 0.25 * (t[0][0] + t[0][1] + t[1][0] + t[1][1]))
            .sum();
        u + p
    }

    /// Exhaustive maximization in Gray-code order with incremental reward
    /// updates. Near-ties are re-scored from scratch; exact ties go to the
    /// lexicographically smallest `x` (comparing `x_0` first).
    pub fn exact_max(&self) -> Result<(Vec<f64>, f64)> {
        let d = self.d;
        if d > EXACT_MAX_DIM {
            return Err(Error::Refused(format!(
                "exhaustive search over 2^{d} assignments (limit d <= {EXACT_MAX_DIM})"
            )));
        }
        let mut adj: Vec<Vec<Neighbor>> = vec![Vec::new(); d];
        for (&(i, j), t) in &self.pairwise {
            adj[i].push((j, *t, true));
            adj[j].push((i, *t, false));
        }
        let mut b = vec![0usize; d];
        let mut r = self.reward_bits(&b);
        let mut best_b = b.clone();
        let mut best_r = r;
        let lex_less = |a: &[usize], c: &[usize]| a.iter().zip(c).find(|(p, q)| p != q).is_some_and(|(p, q)| p < q);
        for step in 1u64..(1u64 << d) {
            let i = step.trailing_zeros() as usize;
            let (old, new) = (b[i], 1 - b[i]);
            let mut delta = self.unary[i][new] - self.unary[i][old];
            for &(j, t, first) in &adj[i] {
                let bj = b[j];
                delta += if first { t[new][bj] - t[old][bj] } else { t[bj][new] - t[bj][old] };
            }
            b[i] = new;
            r += delta;
            if r > best_r + 1e-9 {
                best_r = r;
                best_b.copy_from_slice(&b);
            } else if r >= best_r - 1e-9 {
                let exact = self.reward_bits(&b);
                let exact_best = self.reward_bits(&best_b);
                if exact > exact_best || (exact == exact_best && lex_less(&b, &best_b)) {
                    best_r = exact;
                    best_b.copy_from_slice(&b);
                }
            }
        }
        let x: Vec<f64> = best_b.iter().map(|&v| v as f64).collect();
        let r = self.reward_bits(&best_b);
        Ok((x, r))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = InstanceFile {
            schema: Some(INSTANCE_SCHEMA.into()),
            d: self.d,
            seed: self.seed,
            unary: self.unary.clone(),
            pairwise: self
                .pairwise
                .iter()
                .map(|(&(i, j), t)| (format!("{i},{j}"), *t))
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if let Some(s) = f.schema.as_deref().filter(|s| *s != INSTANCE_SCHEMA) {
            return Err(Error::Format(format!("unsupported instance schema `{s}`")));
        }
        let mut pairwise = BTreeMap::new();
        for (key, t) in f.pairwise {
            let parsed = key
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            let (i, j) = parsed.ok_or_else(|| Error::Format(format!("bad pair key `{key}`")))?;
            pairwise.insert((i, j), t);
        }
        let mut inst = Self::new(f.d, f.unary, pairwise)?;
        inst.seed = f.seed;
        Ok(inst)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// A distribution over `{0,1}^d` with trainable parameters.
///
/// Tractable policies return their exact log-probability from
/// [`Policy::log_prob`]; the latent policy returns `None` and exposes its
/// model through [`Policy::latent`] so SUMO can be used instead.
pub trait Policy {
    fn dim(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>>;
    fn log_prob<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Option<Var<'t>>>;
    fn latent(&self) -> Option<&MlpVae> {
        None
    }
}

fn bernoulli_draws(logits: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
    logits
        .iter()
        .map(|&l| {
            let q = 1.0 / (1.0 + (-l).exp());
            if rng.random::<f64>() < q {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// `p(x) = Π_i Bernoulli(x_i; sigmoid(ℓ_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentPolicy {
    d: usize,
    params: ParamSet,
}

impl IndependentPolicy {
    /// All logits zero.
    pub fn new(d: usize) -> Self {
        let mut params = ParamSet::new();
        params.push("logits", ParamGroup::Decoder, Tensor::zeros(&[1, d]));
        Self { d, params }
    }

    pub fn logits(&self) -> &[f64] {
        self.params.get(0).value.data()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.logits().iter().map(|l| 1.0 / (1.0 + (-l).exp())).collect()
    }

    /// Most likely assignment (logit > 0 ↦ 1).
    pub fn greedy(&self) -> Vec<f64> {
        self.logits().iter().map(|&l| if l > 0.0 { 1.0 } else { 0.0 }).collect()
    }
}

impl Policy for IndependentPolicy {
    fn dim(&self) -> usize {
        self.d
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(bernoulli_draws(self.logits(), rng))
    }

    fn log_prob<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Option<Var<'t>>> {
        Ok(Some(x.bernoulli_log_pmf(p.var(0))?.sum()))
    }
}

/// Masked one-hidden-layer network: `ℓ_j` depends only on `x_{<j}`.
/// Hidden unit `k` has degree `1 + k mod (d − 1)` and sees inputs
/// `i < degree`; output `j` sees hidden units with degree `≤ j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoregressivePolicy {
    d: usize,
    params: ParamSet,
    in_mask: Tensor,
    out_mask: Tensor,
}

impl AutoregressivePolicy {
    /// Glorot-uniform weights, zero biases.
    pub fn new(d: usize, hidden: usize, rng: &mut dyn RngCore) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(Error::domain("autoregressive policy needs d >= 1 and hidden >= 1"));
        }
        let degree = |k: usize| if d > 1 { 1 + k % (d - 1) } else { usize::MAX };
        let in_mask: Vec<f64> = (0..d)
            .flat_map(|i| (0..hidden).map(move |k| if i < degree(k) && d > 1 { 1.0 } else { 0.0 }))
            .collect();
        let out_mask: Vec<f64> = (0..hidden)
            .flat_map(|k| (0..d).map(move |j| if d > 1 && degree(k) <= j { 1.0 } else { 0.0 }))
            .collect();
        let mut params = ParamSet::new();
        let glorot = |rng: &mut dyn RngCore, a: usize, b: usize| {
            let lim = (6.0 / (a + b) as f64).sqrt();
            Tensor::matrix(a, b, (0..a * b).map(|_| rng.random_range(-lim..lim)).collect())
        };
        params.push("ar.w1", ParamGroup::Decoder, glorot(rng, d, hidden)?);
        params.push("ar.b1", ParamGroup::Decoder, Tensor::zeros(&[1, hidden]));
        params.push("ar.w2", ParamGroup::Decoder, glorot(rng, hidden, d)?);
        params.push("ar.b2", ParamGroup::Decoder, Tensor::zeros(&[1, d]));
        Ok(Self {
            d,
            params,
            in_mask: Tensor::matrix(d, hidden, in_mask)?,
            out_mask: Tensor::matrix(hidden, d, out_mask)?,
        })
    }

    /// Sets every parameter to zero, giving uniform conditionals.
    pub fn zero(&mut self) {
        for i in 0..self.params.len() {
            let p = self.params.get_mut(i);
            p.value = Tensor::zeros_like(&p.value);
        }
    }

    fn logits<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let w1 = p.var(0).mul(tape.constant(self.in_mask.clone()))?;
        let w2 = p.var(2).mul(tape.constant(self.out_mask.clone()))?;
        let h = x.matmul(w1)?.add(p.var(1))?.tanh();
        h.matmul(w2)?.add(p.var(3))
    }
}

impl Policy for AutoregressivePolicy {
    fn dim(&self) -> usize {
        self.d
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Sequential: `d` network evaluations, one per coordinate.
    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, GradTarget::None);
        let mut x = vec![0.0; self.d];
        for j in 0..self.d {
            let l = self.logits(&p, tape.constant(Tensor::row(x.clone())))?;
            let q = 1.0 / (1.0 + (-l.value().data()[j]).exp());
            x[j] = if rng.random::<f64>() < q { 1.0 } else { 0.0 };
        }
        Ok(x)
    }

    fn log_prob<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Option<Var<'t>>> {
        Ok(Some(x.bernoulli_log_pmf(self.logits(p, x)?)?.sum()))
    }
}

/// `p(x) = ∫ Π_i p_θ(x_i | z) p(z) dz` with an MLP decoder; `log p(x)` is
/// estimated by SUMO using the model's amortized proposal.
#[derive(Debug, Clone)]
pub struct LatentPolicy {
    vae: MlpVae,
}

impl LatentPolicy {
    pub fn new(d: usize, latent_dim: usize, hidden: Vec<usize>, rng: &mut dyn RngCore) -> Result<Self> {
        let cfg = MlpVaeConfig {
            data_dim: d,
            latent_dim,
            hidden,
            observation: ObservationKind::Bernoulli,
        };
        Ok(Self {
            vae: MlpVae::new(cfg, rng)?,
        })
    }

    pub fn from_vae(vae: MlpVae) -> Result<Self> {
        if vae.config().observation != ObservationKind::Bernoulli {
            return Err(Error::domain("latent policy needs Bernoulli observations"));
        }
        Ok(Self { vae })
    }

    pub fn vae(&self) -> &MlpVae {
        &self.vae
    }

    pub fn vae_mut(&mut self) -> &mut MlpVae {
        &mut self.vae
    }
}

impl Policy for LatentPolicy {
    fn dim(&self) -> usize {
        self.vae.data_dim()
    }

    fn params(&self) -> &ParamSet {
        self.vae.params()
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.vae.params_mut()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.vae.params().bind(&tape, GradTarget::None);
        let z = self.vae.sample_prior(&p, 1, rng)?;
        let x = self.vae.decoder_sample(&p, z, rng)?;
        let v = x.value().data().to_vec();
        Ok(v)
    }

    fn log_prob<'t>(&self, _p: &BoundParams<'t>, _x: Var<'t>) -> Result<Option<Var<'t>>> {
        Ok(None)
    }

    fn latent(&self) -> Option<&MlpVae> {
        Some(&self.vae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforceConfig {
    pub batch: usize,
    /// Entropy weight λ.
    pub lambda: f64,
    pub baseline_decay: f64,
    /// SUMO settings for the latent policy.
    pub m: usize,
    pub dist: TruncationDistribution,
    /// Test hook: reuse the score draw for the entropy term instead of an
    /// independent draw. Biased when `lambda > 0`.
    #[serde(default)]
    pub share_entropy_draw: bool,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            lambda: 0.0,
            baseline_decay: 0.99,
            m: 10,
            dist: TruncationDistribution::default(),
            share_entropy_draw: false,
        }
    }
}

/// Exponential moving average of batch mean rewards, bias-corrected like
/// Adam's moments. Only past batches enter the baseline used for a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReinforceState {
    ema: f64,
    updates: u64,
}

impl ReinforceState {
    pub fn baseline(&self, decay: f64) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.ema / (1.0 - decay.powf(self.updates as f64))
        }
    }

    fn update(&mut self, decay: f64, batch_mean: f64) {
        self.ema = decay * self.ema + (1.0 - decay) * batch_mean;
        self.updates += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceOutput {
    /// Ascent direction for the policy parameters (decoder group).
    pub decoder: Vec<Tensor>,
    /// Descent direction `∇φ SUMO²` for the latent policy's proposal; empty
    /// for tractable policies.
    pub encoder: Vec<Tensor>,
    pub mean_reward: f64,
    pub reward_variance: f64,
    pub best_reward: f64,
    pub best_x: Vec<f64>,
    pub weight_evals: u64,
    pub finite: bool,
}

struct SampleTerm {
    x: Vec<f64>,
    reward: f64,
    decoder: Vec<Tensor>,
    encoder: Vec<Tensor>,
    evals: u64,
}

/// Batch REINFORCE estimate of `∇θ (E[R(x)] + λ H(p_θ))`.
///
/// Each sample contributes `(R(x) − λ·L_a(x) − b)·∇θ L_b(x)`, where `L` is
/// the exact `log p(x)` for tractable policies and a SUMO draw for the
/// latent policy, `L_a` and `L_b` being independent draws. `b` is the
/// baseline from previous batches; `state` is updated after the batch.
/// Sample `i` of `step` uses stream `step * batch + i` of `seed`.
pub fn reinforce_grad<P: Policy + Sync + ?Sized>(
    policy: &P,
    instance: &QpboInstance,
    cfg: &ReinforceConfig,
    state: &mut ReinforceState,
    seed: u64,
    step: u64,
) -> Result<ReinforceOutput> {
    if cfg.batch == 0 || !(cfg.lambda >= 0.0) {
        return Err(Error::domain("REINFORCE needs batch >= 1 and lambda >= 0"));
    }
    if policy.dim() != instance.dim() {
        return Err(Error::shape("reinforce_grad", format!("policy d = {}, instance d = {}", policy.dim(), instance.dim())));
    }
    let baseline = state.baseline(cfg.baseline_decay);
    let terms = parallel_draws_from(seed, step * cfg.batch as u64, cfg.batch, |rng, _| {
        sample_term(policy, instance, cfg, baseline, rng)
    })?;
    let n = terms.len() as f64;
    let rewards: Vec<f64> = terms.iter().map(|t| t.reward).collect();
    let mut decoder: Vec<Tensor> = Vec::new();
    let mut encoder: Vec<Tensor> = Vec::new();
    for t in &terms {
        for (acc, g) in [(&mut decoder, &t.decoder), (&mut encoder, &t.encoder)] {
            if acc.is_empty() {
                *acc = g.iter().map(|x| x.map(|v| v / n)).collect();
            } else {
                for (a, gi) in acc.iter_mut().zip(g) {
                    a.axpy(1.0 / n, gi)?;
                }
            }
        }
    }
    let (bi, _) = rewards
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &r)| if r > bv { (i, r) } else { (bi, bv) });
    let mean_reward = mean(&rewards);
    state.update(cfg.baseline_decay, mean_reward);
    let finite = decoder.iter().chain(&encoder).all(Tensor::is_finite);
    Ok(ReinforceOutput {
        decoder,
        encoder,
        mean_reward,
        reward_variance: variance(&rewards),
        best_reward: rewards[bi],
        best_x: terms[bi].x.clone(),
        weight_evals: terms.iter().map(|t| t.evals).sum(),
        finite,
    })
}

fn sample_term<P: Policy + ?Sized>(
    policy: &P,
    instance: &QpboInstance,
    cfg: &ReinforceConfig,
    baseline: f64,
    rng: &mut dyn RngCore,
) -> Result<SampleTerm> {
    let x = policy.sample(rng)?;
    let reward = instance.reward(&x)?;
    let tape = Tape::new();
    let xv = tape.constant(Tensor::row(x.clone()));
    match policy.latent() {
        None => {
            let p = policy.params().bind(&tape, GradTarget::Decoder);
            let lp = policy
                .log_prob(&p, xv)?
                .ok_or_else(|| Error::domain("tractable policy returned no log-probability"))?;
            let coef = reward - cfg.lambda * lp.item()? - baseline;
            let decoder = p.grads(policy.params(), ParamGroup::Decoder, lp.scale(coef))?;
            Ok(SampleTerm {
                x,
                reward,
                decoder,
                encoder: Vec::new(),
                evals: 0,
            })
        }
        Some(vae) => {
            let a = if cfg.share_entropy_draw || cfg.lambda == 0.0 {
                None
            } else {
                Some(sumo(vae, &x, cfg.m, &cfg.dist, rng)?)
            };
            let p = vae.params().bind(&tape, GradTarget::Both);
            let b = sumo_on_tape(vae, &p, xv, cfg.m, &cfg.dist, rng)?;
            let la = a.as_ref().map_or(b.estimate.value, |s| s.value);
            let coef = reward - cfg.lambda * la - baseline;
            let decoder = p.grads(vae.params(), ParamGroup::Decoder, b.value.scale(coef))?;
            let encoder = p.grads(vae.params(), ParamGroup::Encoder, b.value.square())?;
            let evals = b.estimate.weight_evals + a.map_or(0, |s| s.weight_evals);
            Ok(SampleTerm {
                x,
                reward,
                decoder,
                encoder,
                evals,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_var() -> QpboInstance {
        let mut pw = BTreeMap::new();
        pw.insert((0, 1), [[0.0, 0.0], [0.0, 5.0]]);
        QpboInstance::new(2, vec![[0.0, 1.0], [0.0, 1.0]], pw).unwrap()
    }

    #[test]
    fn reward_examples() {
        let inst = two_var();
        assert_eq!(inst.reward(&[1.0, 1.0]).unwrap(), 7.0);
        assert!(inst.reward(&[1.0]).is_err());
        assert!(inst.reward(&[1.0, 0.5]).is_err());
        let zero = QpboInstance::new(3, vec![[0.0; 2]; 3], BTreeMap::new()).unwrap();
        assert_eq!(zero.reward(&[1.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(zero.exact_max().unwrap(), (vec![0.0; 3], 0.0));
        assert_eq!(inst.exact_max().unwrap(), (vec![1.0, 1.0], 7.0));
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let inst = QpboInstance::new(25, vec![[0.0; 2]; 25], BTreeMap::new()).unwrap();
        assert!(matches!(inst.exact_max(), Err(Error::Refused(_))));
    }

    #[test]
    fn invalid_pairs_are_rejected() {
        let mut pw = BTreeMap::new();
        pw.insert((1, 0), [[0.0; 2]; 2]);
        assert!(QpboInstance::new(2, vec![[0.0; 2]; 2], pw).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let inst = QpboInstance::random(6, 3);
        let text = inst.to_json().unwrap();
        assert!(text.contains("\"0,1\""));
        let back = QpboInstance::from_json(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn mean_random_reward_matches_enumeration() {
        let inst = QpboInstance::random(8, 5);
        let mut total = 0.0;
        for mask in 0u32..256 {
            let x: Vec<f64> = (0..8).map(|i| ((mask >> i) & 1) as f64).collect();
            total += inst.reward(&x).unwrap();
        }
        assert!((total / 256.0 - inst.mean_random_reward()).abs() < 1e-12);
    }

    #[test]
    fn uniform_independent_policy() {
        let pol = IndependentPolicy::new(5);
        let tape = Tape::new();
        let p = pol.params().bind(&tape, GradTarget::None);
        let x = tape.constant(Tensor::row(vec![1.0, 0.0, 0.0, 1.0, 1.0]));
        let lp = pol.log_prob(&p, x).unwrap().unwrap().item().unwrap();
        assert!((lp - 5.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn autoregressive_masks_respect_ordering() {
        let mut rng = stream(1, 0);
        let pol = AutoregressivePolicy::new(5, 12, &mut rng).unwrap();
        // Changing x_j must leave logits 0..=j unchanged.
        let tape = Tape::new();
        let p = pol.params().bind(&tape, GradTarget::None);
        let base = vec![0.0, 1.0, 0.0, 1.0, 1.0];
        let l0 = pol.logits(&p, tape.constant(Tensor::row(base.clone()))).unwrap().value();
        for j in 0..5 {
            let mut x = base.clone();
            x[j] = 1.0 - x[j];
            let l = pol.logits(&p, tape.constant(Tensor::row(x))).unwrap().value();
            for i in 0..=j {
                assert_eq!(l.data()[i], l0.data()[i]);
            }
        }
    }

    #[test]
    fn autoregressive_normalizes() {
        let mut rng = stream(2, 0);
        let pol = AutoregressivePolicy::new(4, 6, &mut rng).unwrap();
        let tape = Tape::new();
        let p = pol.params().bind(&tape, GradTarget::None);
        let mut total = 0.0;
        for mask in 0u32..16 {
            let x: Vec<f64> = (0..4).map(|i| ((mask >> i) & 1) as f64).collect();
            let lp = pol.log_prob(&p, tape.constant(Tensor::row(x))).unwrap().unwrap();
            total += lp.item().unwrap().exp();
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}
