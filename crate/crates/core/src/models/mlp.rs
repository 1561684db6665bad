//! Amortized VAE with tanh MLP encoder and decoder.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{standard_normal_var, BoundParams, LatentVariableModel, ParamGroup, ParamSet};
use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Predicted log standard deviations are clamped to `[-LOG_STD_CLAMP, LOG_STD_CLAMP]`.
pub const LOG_STD_CLAMP: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Bernoulli,
    Gaussian,
}

/// A stack of affine layers with tanh between them, stored in a
/// [`ParamSet`] owned by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    /// Adds weights `{prefix}.{i}.w` (`[in, out]`) and biases `{prefix}.{i}.b`
    /// (`[1, out]`) for consecutive `sizes`. Weights use Glorot-uniform
    /// initialization, biases start at zero.
    pub fn build(
        params: &mut ParamSet,
        prefix: &str,
        sizes: &[usize],
        group: ParamGroup,
        rng: &mut dyn RngCore,
    ) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                let wi = params.push(
                    format!("{prefix}.{i}.w"),
                    group,
                    Tensor::matrix(fan_in, fan_out, data).expect("sizes agree"),
                );
                let bi = params.push(format!("{prefix}.{i}.b"), group, Tensor::zeros(&[1, fan_out]));
                (wi, bi)
            })
            .collect();
        Self { layers }
    }

    /// Recovers the layer layout from parameter names.
    pub(crate) fn locate(params: &ParamSet, prefix: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0.. {
            let find = |suffix: &str| {
                let name = format!("{prefix}.{i}.{suffix}");
                params.iter().position(|p| p.name == name)
            };
            match (find("w"), find("b")) {
                (Some(w), Some(b)) => layers.push((w, b)),
                (None, None) => break,
                _ => return Err(Error::Format(format!("layer {prefix}.{i} is incomplete"))),
            }
        }
        if layers.is_empty() {
            return Err(Error::Format(format!("no layers under `{prefix}`")));
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward<'t>(&self, p: &BoundParams<'t>, input: Var<'t>) -> Result<Var<'t>> {
        let mut h = input;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(p.var(w))?.add(p.var(b))?;
            if i + 1 < self.layers.len() {
                h = h.tanh();
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpVaeConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    /// Hidden widths, shared by encoder and decoder. Empty gives affine maps.
    pub hidden: Vec<usize>,
    pub observation: ObservationKind,
}

/// `z ~ N(0, I)`; `x | z` Bernoulli(sigmoid(f_θ(z))) or
/// `N(μ_θ(z), diag σ_θ(z)²)`; `q_φ(z; x) = N(μ_φ(x), diag σ_φ(x)²)`.
#[derive(Debug)]
pub struct MlpVae {
    config: MlpVaeConfig,
    params: ParamSet,
    encoder: Mlp,
    decoder: Mlp,
    clamp_events: AtomicU64,
}

impl Clone for MlpVae {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            clamp_events: AtomicU64::new(self.clamp_events()),
        }
    }
}

impl MlpVae {
    pub fn new(config: MlpVaeConfig, rng: &mut dyn RngCore) -> Result<Self> {
        if config.data_dim == 0 || config.latent_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::domain(format!("degenerate MLP-VAE layout {config:?}")));
        }
        let mut params = ParamSet::new();
        let mut enc_sizes = vec![config.data_dim];
        enc_sizes.extend(&config.hidden);
        enc_sizes.push(2 * config.latent_dim);
        let encoder = Mlp::build(&mut params, "enc", &enc_sizes, ParamGroup::Encoder, rng);
        let out = match config.observation {
            ObservationKind::Bernoulli => config.data_dim,
            ObservationKind::Gaussian => 2 * config.data_dim,
        };
        let mut dec_sizes = vec![config.latent_dim];
        dec_sizes.extend(&config.hidden);
        dec_sizes.push(out);
        let decoder = Mlp::build(&mut params, "dec", &dec_sizes, ParamGroup::Decoder, rng);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            clamp_events: AtomicU64::new(0),
        })
    }

    pub(crate) fn from_params(config: MlpVaeConfig, params: ParamSet) -> Result<Self> {
        let encoder = Mlp::locate(&params, "enc")?;
        let decoder = Mlp::locate(&params, "dec")?;
        if encoder.depth() != config.hidden.len() + 1 || decoder.depth() != config.hidden.len() + 1 {
            return Err(Error::Format("layer count disagrees with config".into()));
        }
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            clamp_events: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &MlpVaeConfig {
        &self.config
    }

    /// Number of log-std entries that hit the clamp so far.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    fn clamp_log_std<'t>(&self, raw: Var<'t>) -> Var<'t> {
        let hits = raw
            .value()
            .data()
            .iter()
            .filter(|v| v.abs() > LOG_STD_CLAMP)
            .count() as u64;
        if hits > 0 {
            self.clamp_events.fetch_add(hits, Ordering::Relaxed);
        }
        raw.clamp(-LOG_STD_CLAMP, LOG_STD_CLAMP)
    }

    fn split<'t>(&self, out: Var<'t>, half: usize) -> Result<(Var<'t>, Var<'t>)> {
        let mean = out.narrow(1, 0, half)?;
        let log_std = self.clamp_log_std(out.narrow(1, half, half)?);
        Ok((mean, log_std))
    }

    /// Encoder mean and clamped log standard deviation for rows of `x`.
    pub fn encoder_params<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let out = self.encoder.forward(p, x)?;
        self.split(out, self.config.latent_dim)
    }

    /// Raw decoder output: logits for Bernoulli observations, `[mean | log_std]`
    /// for Gaussian ones.
    pub fn decoder_output<'t>(&self, p: &BoundParams<'t>, z: Var<'t>) -> Result<Var<'t>> {
        self.decoder.forward(p, z)
    }

    /// Tape-free encoder evaluation for a single observation.
    pub fn encode_mean_log_std(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, super::GradTarget::None);
        let (m, s) = self.encoder_params(&p, tape.constant(Tensor::row(x.to_vec())))?;
        Ok((m.value().data().to_vec(), s.value().data().to_vec()))
    }
}

impl LatentVariableModel for MlpVae {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn log_joint<'t>(&self, p: &BoundParams<'t>, x: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let zero = tape.scalar(0.0);
        let prior = z.gaussian_log_pdf(zero, zero)?.sum_axis(1)?;
        let out = self.decoder.forward(p, z)?;
        let lik = match self.config.observation {
            ObservationKind::Bernoulli => x.bernoulli_log_pmf(out)?,
            ObservationKind::Gaussian => {
                let (mean, log_std) = self.split(out, self.config.data_dim)?;
                x.gaussian_log_pdf(mean, log_std)?
            }
        };
        prior.add(lik.sum_axis(1)?)
    }

    fn encode<'t>(
        &self,
        p: &BoundParams<'t>,
        x: Var<'t>,
        eps: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (mean, log_std) = self.encoder_params(p, x)?;
        let z = mean.add(log_std.exp().mul(eps)?)?;
        let log_q = z.gaussian_log_pdf(mean, log_std)?.sum_axis(1)?;
        Ok((z, log_q))
    }

    fn sample_prior<'t>(
        &self,
        p: &BoundParams<'t>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>> {
        let tape = p.var(0).tape();
        standard_normal_var(tape, n, self.config.latent_dim, rng)
    }

    fn decoder_sample<'t>(
        &self,
        p: &BoundParams<'t>,
        z: Var<'t>,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>> {
        let out = self.decoder.forward(p, z)?;
        let tape = z.tape();
        let n = z.shape()[0];
        let d = self.config.data_dim;
        match self.config.observation {
            ObservationKind::Bernoulli => {
                let probs = out.sigmoid().value();
                let bits = probs
                    .data()
                    .iter()
                    .map(|&q| if rng.random::<f64>() < q { 1.0 } else { 0.0 })
                    .collect();
                Ok(tape.constant(Tensor::matrix(n, d, bits)?))
            }
            ObservationKind::Gaussian => {
                let (mean, log_std) = self.split(out, d)?;
                let eps = standard_normal_var(tape, n, d, rng)?;
                mean.add(log_std.exp().mul(eps)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GradTarget;
    use crate::rng::stream;

    fn config(obs: ObservationKind) -> MlpVaeConfig {
        MlpVaeConfig {
            data_dim: 4,
            latent_dim: 2,
            hidden: vec![5],
            observation: obs,
        }
    }

    #[test]
    fn zero_weights_give_standard_normal_proposal() {
        let mut rng = stream(3, 0);
        let mut vae = MlpVae::new(config(ObservationKind::Bernoulli), &mut rng).unwrap();
        for i in 0..vae.params().len() {
            let p = vae.params_mut().get_mut(i);
            p.value = Tensor::zeros_like(&p.value);
        }
        let (m, s) = vae.encode_mean_log_std(&[1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn glorot_bounds_and_shapes() {
        let mut rng = stream(4, 0);
        let vae = MlpVae::new(config(ObservationKind::Gaussian), &mut rng).unwrap();
        let w = vae.params().by_name("enc.0.w").unwrap();
        assert_eq!(w.value.shape(), &[4, 5]);
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(w.value.data().iter().all(|v| v.abs() <= limit));
        assert_eq!(vae.params().by_name("dec.1.w").unwrap().value.shape(), &[5, 8]);
        assert_eq!(vae.params().by_name("enc.1.b").unwrap().group, ParamGroup::Encoder);
    }

    #[test]
    fn bernoulli_joint_matches_manual_evaluation() {
        let cfg = MlpVaeConfig {
            hidden: vec![],
            ..config(ObservationKind::Bernoulli)
        };
        let mut rng = stream(5, 0);
        let vae = MlpVae::new(cfg, &mut rng).unwrap();
        let w = vae.params().by_name("dec.0.w").unwrap().value.clone();
        let x = [1.0, 0.0, 0.0, 1.0];
        let z = [0.3, -1.2];
        let tape = Tape::new();
        let p = vae.params().bind(&tape, GradTarget::None);
        let lj = vae
            .log_joint(
                &p,
                tape.constant(Tensor::row(x.to_vec())),
                tape.constant(Tensor::row(z.to_vec())),
            )
            .unwrap()
            .item()
            .unwrap();
        let mut want = z.iter().map(|v| -0.5 * v * v).sum::<f64>() - (2.0 * std::f64::consts::PI).ln();
        for (j, &xj) in x.iter().enumerate().take(4) {
            let logit = z[0] * w.at2(0, j) + z[1] * w.at2(1, j);
            let prob = 1.0 / (1.0 + (-logit).exp());
            want += if xj == 1.0 { prob.ln() } else { (1.0 - prob).ln() };
        }
        assert!((lj - want).abs() < 1e-12);
    }

    #[test]
    fn clamping_is_counted() {
        let cfg = MlpVaeConfig {
            hidden: vec![],
            ..config(ObservationKind::Gaussian)
        };
        let mut rng = stream(6, 0);
        let mut vae = MlpVae::new(cfg, &mut rng).unwrap();
        let b = vae.params_mut().by_name_mut("enc.0.b").unwrap();
        b.value.data_mut()[2] = 20.0;
        let (_, s) = vae.encode_mean_log_std(&[0.0; 4]).unwrap();
        assert_eq!(s[0], LOG_STD_CLAMP);
        assert_eq!(vae.clamp_events(), 1);
        assert_eq!(vae.clone().clamp_events(), 1);
    }
}
