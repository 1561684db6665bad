//! Linear-Gaussian toy model with a tractable marginal.
//!
//! `z ~ N(θ, I)`, `x | z ~ N(z, I)`, so `p_θ(x) = N(x; θ, 2I)` and the exact
//! posterior is `N((x + θ)/2, I/2)`. The proposal is the affine family
//! `q_φ(z; x) = N(A x + b, σ² I)`.

use rand::RngCore;

use super::{standard_normal_var, BoundParams, LatentVariableModel, ParamGroup, ParamSet};
use crate::autodiff::{Tensor, Var};
use crate::rng::standard_normals;
use crate::{Error, Result};

const THETA: usize = 0;
const ENC_A: usize = 1;
const ENC_B: usize = 2;
const ENC_LOG_STD: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianToy {
    dim: usize,
    params: ParamSet,
    /// Proposal is `N((x + θ)/2, I/2)` as a function of θ, ignoring `A`, `b`.
    tied_posterior: bool,
}

/// `log N(x; θ, 2I)`.
pub fn toy_analytic_logp(x: &[f64], theta: &[f64]) -> Result<f64> {
    if x.len() != theta.len() {
        return Err(Error::shape(
            "toy_analytic_logp",
            format!("x has {} entries, theta {}", x.len(), theta.len()),
        ));
    }
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(theta).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(-0.5 * d * (4.0 * std::f64::consts::PI).ln() - 0.25 * sq)
}

/// Mean and isotropic covariance scalar of `p_θ(z | x) = N((x + θ)/2, I/2)`.
pub fn toy_exact_posterior_params(x: &[f64], theta: &[f64]) -> (Vec<f64>, f64) {
    let mean = x.iter().zip(theta).map(|(a, b)| 0.5 * (a + b)).collect();
    (mean, 0.5)
}

impl LinearGaussianToy {
    /// Builds the model from explicit parameters. `a` is row-major `dim × dim`.
    pub fn new(theta: Vec<f64>, a: Vec<f64>, b: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        let dim = theta.len();
        if dim == 0 || a.len() != dim * dim || b.len() != dim || log_std.len() != dim {
            return Err(Error::shape(
                "LinearGaussianToy::new",
                format!(
                    "theta {}, A {}, b {}, log_std {}",
                    dim,
                    a.len(),
                    b.len(),
                    log_std.len()
                ),
            ));
        }
        let mut params = ParamSet::new();
        params.push("theta", ParamGroup::Decoder, Tensor::row(theta));
        params.push("enc.a", ParamGroup::Encoder, Tensor::matrix(dim, dim, a)?);
        params.push("enc.b", ParamGroup::Encoder, Tensor::row(b));
        params.push("enc.log_std", ParamGroup::Frozen, Tensor::row(log_std));
        Ok(Self {
            dim,
            params,
            tied_posterior: false,
        })
    }

    /// Proposal with the optimal affine map, `A = I/2`, `b = θ/2`, a fixed
    /// standard deviation `sqrt(2/3)`, and each of `A`, `b` perturbed by
    /// independent `N(0, perturb²)` noise.
    pub fn near_optimal(theta: Vec<f64>, perturb: f64, rng: &mut dyn RngCore) -> Result<Self> {
        let d = theta.len();
        let na = standard_normals(rng, d * d);
        let nb = standard_normals(rng, d);
        let a = (0..d * d)
            .map(|i| if i % (d + 1) == 0 { 0.5 } else { 0.0 } + perturb * na[i])
            .collect();
        let b = theta.iter().zip(&nb).map(|(t, n)| 0.5 * t + perturb * n).collect();
        let log_std = vec![(2.0f64 / 3.0).sqrt().ln(); d];
        Self::new(theta, a, b, log_std)
    }

    /// Proposal equal to the exact posterior for every θ: its mean is
    /// computed from θ on the tape, so each importance weight equals
    /// `p_θ(x)` as a function of θ. Only θ is trainable.
    pub fn with_exact_posterior(theta: Vec<f64>) -> Result<Self> {
        let d = theta.len();
        let a = (0..d * d).map(|i| if i % (d + 1) == 0 { 0.5 } else { 0.0 }).collect();
        let b = theta.iter().map(|t| 0.5 * t).collect();
        let mut m = Self::new(theta, a, b, vec![0.5f64.ln() * 0.5; d])?;
        m.params.set_group("enc.a", ParamGroup::Frozen)?;
        m.params.set_group("enc.b", ParamGroup::Frozen)?;
        m.tied_posterior = true;
        Ok(m)
    }

    pub fn tied_posterior(&self) -> bool {
        self.tied_posterior
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> &[f64] {
        self.params.get(THETA).value.data()
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::shape("set_theta", format!("{} vs {}", theta.len(), self.dim)));
        }
        self.params.get_mut(THETA).value = Tensor::row(theta.to_vec());
        Ok(())
    }

    /// `log p_θ(x)` under the current θ.
    pub fn analytic_logp(&self, x: &[f64]) -> Result<f64> {
        toy_analytic_logp(x, self.theta())
    }

    /// `∇_θ log p_θ(x) = (x - θ)/2`.
    pub fn analytic_score(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.theta()).map(|(a, t)| 0.5 * (a - t)).collect()
    }

    pub(crate) fn from_params(params: ParamSet, tied_posterior: bool) -> Result<Self> {
        let names = ["theta", "enc.a", "enc.b", "enc.log_std"];
        if params.len() != names.len()
            || params.iter().zip(names).any(|(p, n)| p.name != n)
        {
            return Err(Error::Format("toy checkpoint parameters out of order".into()));
        }
        let dim = params.get(THETA).value.numel();
        let m = Self {
            dim,
            params,
            tied_posterior,
        };
        let ok = m.params.get(ENC_A).value.shape() == [dim, dim]
            && m.params.get(ENC_B).value.numel() == dim
            && m.params.get(ENC_LOG_STD).value.numel() == dim;
        if !ok {
            return Err(Error::Format("toy checkpoint shapes are inconsistent".into()));
        }
        Ok(m)
    }
}

impl LatentVariableModel for LinearGaussianToy {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn log_joint<'t>(&self, p: &BoundParams<'t>, x: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let unit = x.tape().scalar(0.0);
        let prior = z.gaussian_log_pdf(p.var(THETA), unit)?;
        let lik = x.gaussian_log_pdf(z, unit)?;
        prior.add(lik)?.sum_axis(1)
    }

    fn encode<'t>(
        &self,
        p: &BoundParams<'t>,
        x: Var<'t>,
        eps: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let mean = if self.tied_posterior {
            x.add(p.var(THETA))?.scale(0.5)
        } else {
            x.matmul(p.var(ENC_A).transpose()?)?.add(p.var(ENC_B))?
        };
        let log_std = p.var(ENC_LOG_STD);
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
        let theta = p.var(THETA);
        standard_normal_var(theta.tape(), n, self.dim, rng)?.add(theta)
    }

    fn decoder_sample<'t>(
        &self,
        _p: &BoundParams<'t>,
        z: Var<'t>,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>> {
        let n = z.shape()[0];
        z.add(standard_normal_var(z.tape(), n, self.dim, rng)?)
    }
}
