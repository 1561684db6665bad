use serde::{Deserialize, Serialize};
use sumo_core::data::{write_binary_csv, BernoulliMixture};
use sumo_core::rng::derive_seed;

use crate::config::SyntheticConfig;
use crate::error::Result;
use crate::output::{schema, OutputDir};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub rows: usize,
    pub dim: usize,
    pub components: usize,
    pub pixel_means: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct MixtureFile<'a> {
    schema: String,
    #[serde(flatten)]
    mixture: &'a BernoulliMixture,
}

/// Writes `data.csv` (one binary row per sample) and `mixture.json` (the
/// generating weights and per-component pixel probabilities).
pub fn run(cfg: &SyntheticConfig, out: &OutputDir) -> Result<SyntheticSummary> {
    let mix = match cfg.p {
        Some(p) => BernoulliMixture::new(vec![1.0; cfg.components], vec![vec![p; cfg.dim]; cfg.components])?,
        None => BernoulliMixture::random(cfg.dim, cfg.components, derive_seed(cfg.seed, "synthetic/mixture"))?,
    };
    let rows = mix.sample(cfg.rows, derive_seed(cfg.seed, "synthetic/rows"));
    write_binary_csv(&out.file("data.csv"), &rows)?;
    out.write_json(
        "mixture.json",
        &MixtureFile {
            schema: schema("bernoulli-mixture"),
            mixture: &mix,
        },
    )?;
    let pixel_means = (0..cfg.dim)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
        .collect();
    Ok(SyntheticSummary {
        rows: rows.len(),
        dim: cfg.dim,
        components: cfg.components,
        pixel_means,
    })
}
