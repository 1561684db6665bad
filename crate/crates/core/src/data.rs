//! Binary datasets: a seeded Bernoulli-mixture generator and a 0/1 CSV
//! loader/writer (one flattened vector per row under a `# schema` line).

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliMixture {
    pub weights: Vec<f64>,
    /// `components[c][i]` is `P(x_i = 1 | c)`.
    pub components: Vec<Vec<f64>>,
}

impl BernoulliMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::domain("mixture needs one probability table per weight"));
        }
        let dim = components[0].len();
        let valid = weights.iter().all(|w| *w >= 0.0 && w.is_finite())
            && weights.iter().sum::<f64>() > 0.0
            && components
                .iter()
                .all(|c| c.len() == dim && c.iter().all(|p| (0.0..=1.0).contains(p)));
        if !valid || dim == 0 {
            return Err(Error::domain("invalid mixture weights or probabilities"));
        }
        Ok(Self { weights, components })
    }

    /// `n_components` prototypes with pixel probabilities drawn from
    /// {0.1, 0.9}, equal weights. Draws come from stream 0 of `seed`.
    pub fn random(dim: usize, n_components: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, 0);
        let components = (0..n_components)
            .map(|_| (0..dim).map(|_| if rng.random::<bool>() { 0.9 } else { 0.1 }).collect())
            .collect();
        Self::new(vec![1.0; n_components], components)
    }

    pub fn dim(&self) -> usize {
        self.components[0].len()
    }

    /// `n` rows; sample `i` uses stream `i + 1` of `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let total: f64 = self.weights.iter().sum();
        (0..n)
            .map(|i| {
                let mut rng = stream(seed, i as u64 + 1);
                let mut u = rng.random::<f64>() * total;
                let mut c = self.weights.len() - 1;
                for (j, w) in self.weights.iter().enumerate() {
                    if u < *w {
                        c = j;
                        break;
                    }
                    u -= w;
                }
                self.components[c]
                    .iter()
                    .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Exact `log p(x)` under the mixture.
    pub fn log_prob(&self, x: &[f64]) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| {
                (w / total).ln()
                    + c.iter()
                        .zip(x)
                        .map(|(&p, &xi)| if xi == 1.0 { p.ln() } else { (1.0 - p).ln() })
                        .sum::<f64>()
            })
            .collect();
        crate::numerics::log_sum_exp(&terms).unwrap_or(f64::NEG_INFINITY)
    }
}

/// First line of every file written by [`write_binary_csv`].
pub const BINARY_CSV_SCHEMA: &str = "# schema: binary-matrix/v1";

pub fn write_binary_csv(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = format!("{BINARY_CSV_SCHEMA}\n");
    for r in rows {
        let line: Vec<&str> = r.iter().map(|&v| if v == 1.0 { "1" } else { "0" }).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses rows of 0/1 tokens. Every row must have the same width; blank
/// lines and `#` comment lines are skipped. Errors name the 1-based line number.
pub fn parse_binary_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| match t.trim() {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                other => Err(Error::Parse {
                    line: i + 1,
                    message: format!("token `{other}` is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{} columns, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("binary matrix has no rows".into()));
    }
    Ok(rows)
}

pub fn load_binary_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_binary_csv(&text)
}
