//! Unnormalized target densities for reverse-KL fitting.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub trait TargetDensity {
    fn dim(&self) -> usize;

    /// `log p*(x)` for each row of `x` (`[n, dim]`); returns `[n]`.
    fn log_prob<'t>(&self, x: Var<'t>) -> Result<Var<'t>>;
}

/// Neal's funnel: `x1 ~ N(0, s²)`, `x2 | x1 ~ N(0, exp(2 x1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelTarget {
    pub scale: f64,
}

impl Default for FunnelTarget {
    fn default() -> Self {
        Self { scale: 1.35 }
    }
}

/// Plain evaluation of the default funnel.
pub fn funnel_logpdf(x1: f64, x2: f64) -> f64 {
    let s = FunnelTarget::default().scale;
    let a = x1 / s;
    let b = x2 * (-x1).exp();
    -0.5 * a * a - s.ln() - 0.5 * b * b - x1 - 2.0 * HALF_LN_2PI
}

impl TargetDensity for FunnelTarget {
    fn dim(&self) -> usize {
        2
    }

    fn log_prob<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        check_cols(&x, 2)?;
        let tape = x.tape();
        let x1 = x.narrow(1, 0, 1)?;
        let x2 = x.narrow(1, 1, 1)?;
        let zero = tape.scalar(0.0);
        let a = x1.gaussian_log_pdf(zero, tape.scalar(self.scale.ln()))?;
        let b = x2.gaussian_log_pdf(zero, x1)?;
        a.add(b)?.sum_axis(1)
    }
}

/// Diagonal Gaussian target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl TargetDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_prob<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        check_cols(&x, self.dim())?;
        let tape = x.tape();
        let mean = tape.constant(Tensor::row(self.mean.clone()));
        let log_std = tape.constant(Tensor::row(self.log_std.clone()));
        x.gaussian_log_pdf(mean, log_std)?.sum_axis(1)
    }
}

fn check_cols(x: &Var<'_>, d: usize) -> Result<()> {
    let s = x.shape();
    if s.len() != 2 || s[1] != d {
        return Err(Error::shape("target log_prob", format!("{s:?}, expected [n, {d}]")));
    }
    Ok(())
}
