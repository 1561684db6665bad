pub mod convergence;
pub mod density;
pub mod qpbo;
pub mod reverse_kl;
pub mod synthetic;
pub mod toy;

use sumo_core::models::LinearGaussianToy;
use sumo_core::rng::{derive_seed, standard_normals, stream};

use sumo_core::training::TrainTrace;

use crate::error::Result;
use crate::output::{num, OutputDir};

/// θ ~ N(0, I), one observation x ~ N(θ, 2I), and an encoder near the
/// optimal affine map. Shared by `toy-unbiased` and `convergence`.
pub fn toy_problem(dim: usize, perturb: f64, seed: u64) -> Result<(LinearGaussianToy, Vec<f64>)> {
    let mut rng = stream(derive_seed(seed, "toy/problem"), 0);
    let theta = standard_normals(&mut rng, dim);
    let noise = standard_normals(&mut rng, dim);
    let x = theta.iter().zip(&noise).map(|(t, n)| t + 2f64.sqrt() * n).collect();
    let model = LinearGaussianToy::near_optimal(theta, perturb, &mut rng)?;
    Ok((model, x))
}

/// `trace.csv` for the likelihood-training loops.
fn write_training_trace(out: &OutputDir, trace: &TrainTrace) -> Result<()> {
    out.write_csv(
        "trace.csv",
        "trace",
        &["step", "objective", "clip_fraction", "weight_evals"],
        trace.rows.iter().map(|r| {
            vec![r.step.to_string(), num(r.objective), num(r.clip_fraction), r.weight_evals.to_string()]
        }),
    )
}
