//! Latent variable models.
//!
//! A model exposes its generative joint `log p_θ(x, z)`, a reparameterized
//! proposal `q_φ(z; x)` and the two sampling paths (prior and decoder), all
//! expressed on an autodiff [`Tape`]. Parameters live in a [`ParamSet`] and
//! are bound onto a tape per evaluation, choosing which groups receive
//! gradients.
//!
//! Shapes: a single observation is a `[1, data_dim]` row; latent samples are
//! `[n, latent_dim]`; per-sample log densities are rank-1 `[n]`.

mod checkpoint;
mod mlp;
mod params;
mod target;
mod toy;

pub use checkpoint::{Checkpoint, ModelSpec, ParamRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use mlp::{Mlp, MlpVae, MlpVaeConfig, ObservationKind, LOG_STD_CLAMP};
pub use params::{BoundParams, GradTarget, Param, ParamGroup, ParamSet};
pub use target::{funnel_logpdf, FunnelTarget, GaussianTarget, TargetDensity};
pub use toy::{toy_analytic_logp, toy_exact_posterior_params, LinearGaussianToy};

use rand::RngCore;

use crate::autodiff::{Tape, Tensor, Var};
use crate::rng::standard_normals;
use crate::Result;

pub trait LatentVariableModel {
    fn latent_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// `log p_θ(x, z)` for every row of `z`; returns `[n]`.
    fn log_joint<'t>(&self, p: &BoundParams<'t>, x: Var<'t>, z: Var<'t>) -> Result<Var<'t>>;

    /// Maps standard-normal noise `eps` (`[n, latent_dim]`) to proposal
    /// samples `z = μ_φ(x) + σ_φ(x) ⊙ eps`, returning `(z, log q_φ(z; x))`.
    fn encode<'t>(
        &self,
        p: &BoundParams<'t>,
        x: Var<'t>,
        eps: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)>;

    /// `n` prior draws `[n, latent_dim]`, reparameterized where the prior
    /// has parameters.
    fn sample_prior<'t>(
        &self,
        p: &BoundParams<'t>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>>;

    /// One observation per row of `z`. Continuous observations are
    /// reparameterized; discrete ones are returned detached.
    fn decoder_sample<'t>(
        &self,
        p: &BoundParams<'t>,
        z: Var<'t>,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>>;

    /// Draws `n` proposal samples for `x`.
    fn encoder_sample<'t>(
        &self,
        p: &BoundParams<'t>,
        x: Var<'t>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let tape = x.tape();
        let eps = standard_normal_var(tape, n, self.latent_dim(), rng)?;
        self.encode(p, x, eps)
    }

    /// Log importance weights `log p(x, z_i) - log q(z_i; x)` for the
    /// proposal samples generated from `eps`; returns `[n]`.
    fn log_weights<'t>(&self, p: &BoundParams<'t>, x: Var<'t>, eps: Var<'t>) -> Result<Var<'t>> {
        let (z, log_q) = self.encode(p, x, eps)?;
        self.log_joint(p, x, z)?.sub(log_q)
    }
}

/// `[rows, cols]` of standard normals as a detached tape value.
pub fn standard_normal_var<'t>(
    tape: &'t Tape,
    rows: usize,
    cols: usize,
    rng: &mut dyn RngCore,
) -> Result<Var<'t>> {
    Ok(tape.constant(Tensor::matrix(rows, cols, standard_normals(rng, rows * cols))?))
}
