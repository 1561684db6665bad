//! Central-difference checks of tape gradients.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad, Tape, Tensor, Var};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so entries near zero are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn random_tensor(rng: &mut dyn RngCore, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data length")
}

/// `Σ f(inputs) ⊙ proj` on a fresh tape, with input gradients when `leaves`.
fn projected<F>(f: &F, inputs: &[Tensor], proj: &Tensor, leaves: bool) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if leaves { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let out = f(&tape, &vars)?.mul(tape.constant(proj.clone()))?.sum();
    let value = out.item()?;
    let grads = if leaves { grad(out, &vars)? } else { Vec::new() };
    Ok((value, grads))
}

/// Largest relative error between the tape gradient of a random projection
/// of `f` and its central differences, over every input entry.
pub fn max_relative_error<F>(f: F, inputs: &[Tensor], rng: &mut dyn RngCore) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars)?.shape()
    };
    let proj = random_tensor(rng, &out_shape, -1.0, 1.0);
    let (_, analytic) = projected(&f, inputs, &proj, true)?;
    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        for idx in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[idx] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[idx] -= FD_STEP;
            let fp = projected(&f, &plus, &proj, false)?.0;
            let fm = projected(&f, &minus, &proj, false)?.0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[which].data()[idx];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCheck {
    pub primitive: &'static str,
    pub round: usize,
    pub max_rel_err: f64,
}

fn op<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    f
}

/// Every differentiable primitive on `rounds` random shape draws. Each
/// round checks 24 configurations.
pub fn primitive_suite(seed: u64, rounds: usize) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for round in 0..rounds {
        let r = rng.random_range(1..4usize);
        let c = rng.random_range(1..5usize);
        let k = rng.random_range(1..4usize);
        let pos = |rng: &mut ChaCha8Rng, s: &[usize]| random_tensor(rng, s, 0.2, 2.0);
        let any = |rng: &mut ChaCha8Rng, s: &[usize]| random_tensor(rng, s, -2.0, 2.0);
        let bits = Tensor::new(vec![r, c], (0..r * c).map(|i| ((i * 7 + round) % 2) as f64).collect())?;
        let rng = &mut rng;

        let mut push = |primitive: &'static str, err: Result<f64>| -> Result<()> {
            out.push(PrimitiveCheck {
                primitive,
                round,
                max_rel_err: err?,
            });
            Ok(())
        };
        let i = [any(rng, &[r, c]), any(rng, &[1, c])];
        push("add", max_relative_error(op(|_, v| v[0].add(v[1])), &i, rng))?;
        let i = [any(rng, &[r, c]), any(rng, &[r, 1])];
        push("sub", max_relative_error(op(|_, v| v[0].sub(v[1])), &i, rng))?;
        let i = [any(rng, &[r, c]), any(rng, &[r, c])];
        push("mul", max_relative_error(op(|_, v| v[0].mul(v[1])), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("scale", max_relative_error(op(|_, v| Ok(v[0].scale(-1.7).add_scalar(0.3))), &i, rng))?;
        let i = [any(rng, &[r, k]), any(rng, &[k, c])];
        push("matmul", max_relative_error(op(|_, v| v[0].matmul(v[1])), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("transpose", max_relative_error(op(|_, v| Ok(v[0].transpose()?.square())), &i, rng))?;
        let i = [any(rng, &[1, c])];
        push("broadcast", max_relative_error(op(|_, v| Ok(v[0].broadcast_to(&[r, c])?.square())), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("reshape", max_relative_error(op(|_, v| Ok(v[0].reshape(&[c, r])?.tanh())), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("sum_axis0", max_relative_error(op(|_, v| v[0].square().sum_axis(0)), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("sum_axis1", max_relative_error(op(|_, v| v[0].square().sum_axis(1)), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("mean", max_relative_error(op(|_, v| Ok(v[0].exp().mean())), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("tanh", max_relative_error(op(|_, v| Ok(v[0].tanh())), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("sigmoid", max_relative_error(op(|_, v| Ok(v[0].sigmoid())), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("softplus", max_relative_error(op(|_, v| Ok(v[0].softplus())), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("exp", max_relative_error(op(|_, v| Ok(v[0].exp())), &i, rng))?;
        let i = [pos(rng, &[r, c])];
        push("log", max_relative_error(op(|_, v| v[0].log()), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("square", max_relative_error(op(|_, v| Ok(v[0].square())), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("clamp", max_relative_error(op(|_, v| Ok(v[0].clamp(-1.0, 1.0).square())), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("logsumexp_axis0", max_relative_error(op(|_, v| v[0].logsumexp_axis(0)), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("logsumexp_axis1", max_relative_error(op(|_, v| v[0].logsumexp_axis(1)), &i, rng))?;
        let i = [any(rng, &[r * c + 1])];
        push("log_cumsum_exp", max_relative_error(op(|_, v| v[0].log_cumsum_exp()), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push("narrow", max_relative_error(op(|_, v| Ok(v[0].narrow(1, c / 2, c - c / 2)?.square())), &i, rng))?;
        let i = [any(rng, &[r, c]), any(rng, &[1, c]), random_tensor(rng, &[r, c], -1.0, 1.0)];
        push("gaussian_log_pdf", max_relative_error(op(|_, v| v[0].gaussian_log_pdf(v[1], v[2])), &i, rng))?;
        let i = [any(rng, &[r, c])];
        push(
            "bernoulli_log_pmf",
            max_relative_error(op(|t, v| t.constant(bits.clone()).bernoulli_log_pmf(v[0])), &i, rng),
        )?;
    }
    Ok(out)
}
