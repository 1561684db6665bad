//! Log-space primitives.
//!
//! Everything here is `f64`. Ladder differences `IWAE_{k+1} - IWAE_k` shrink
//! roughly like `1/k`, which single precision cannot resolve past a few dozen
//! terms.
//!
//! Indexing: slices are stored 0-indexed. Accessors that take a sample count
//! `k` (such as [`LogWeightLadder::iwae_at`]) are 1-indexed, matching the
//! usual `IWAE_k` notation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_entries(values: &[f64], op: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::domain(format!("{op}: empty input")));
    }
    if let Some(bad) = values.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
        return Err(Error::domain(format!("{op}: invalid entry {bad}")));
    }
    Ok(())
}

/// `log(exp(a) + exp(b))` without overflow. `-inf` is the identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(v_i)` via max-shift. Returns `-inf` iff every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    check_entries(values, "log_sum_exp")?;
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Prefix log-sum-exp: `out[i] = log_sum_exp(values[0..=i])`.
///
/// The output is non-decreasing.
pub fn log_cumsum_exp(values: &[f64]) -> Result<Vec<f64>> {
    check_entries(values, "log_cumsum_exp")?;
    Ok(log_cumsum_exp_unchecked(values))
}

pub(crate) fn log_cumsum_exp_unchecked(values: &[f64]) -> Vec<f64> {
    let mut acc = f64::NEG_INFINITY;
    values
        .iter()
        .map(|&v| {
            acc = log_add_exp(acc, v);
            acc
        })
        .collect()
}

/// Per-sample log importance weights together with the cumulative
/// importance-weighted bounds they induce.
///
/// `iwae()[i]` holds `IWAE_{i+1} = log((1/(i+1)) Σ_{j<=i} w_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogWeightLadder {
    log_weights: Vec<f64>,
    iwae: Vec<f64>,
}

impl LogWeightLadder {
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn iwae(&self) -> &[f64] {
        &self.iwae
    }

    pub fn len(&self) -> usize {
        self.iwae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iwae.is_empty()
    }

    /// `IWAE_k`, 1-indexed. Panics if `k` is 0 or exceeds the ladder length.
    pub fn iwae_at(&self, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.len(), "IWAE_{k} outside ladder of length {}", self.len());
        self.iwae[k - 1]
    }

    /// `Δ_k = IWAE_{k+1} - IWAE_k` for `k = 1..len`, stored 0-indexed
    /// (`deltas()[k-1] == Δ_k`).
    pub fn deltas(&self) -> Vec<f64> {
        self.iwae.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Builds the IWAE ladder from log importance weights.
pub fn iwae_ladder(log_weights: &[f64]) -> Result<LogWeightLadder> {
    let cum = log_cumsum_exp(log_weights)?;
    let iwae = cum
        .iter()
        .enumerate()
        .map(|(i, c)| c - ((i + 1) as f64).ln())
        .collect();
    Ok(LogWeightLadder {
        log_weights: log_weights.to_vec(),
        iwae,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    /// Compensated (Neumaier) summation of shifted exponentials. Independent
    /// of the streaming recurrence used by `log_cumsum_exp`.
    fn prefix_oracle(values: &[f64], upto: usize) -> f64 {
        let prefix = &values[..=upto];
        let max = prefix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for v in prefix {
            let term = (v - max).exp();
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        max + (sum + comp).ln()
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - LN_2).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]).unwrap(), 0.0);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + LN_2)).abs() < 1e-12);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn rejects_empty_and_nan() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::Domain(_))));
        assert!(matches!(log_cumsum_exp(&[]), Err(Error::Domain(_))));
        assert!(log_sum_exp(&[0.0, f64::NAN]).is_err());
        assert!(iwae_ladder(&[f64::NAN]).is_err());
        assert!(log_sum_exp(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn log_cumsum_exp_examples() {
        let out = log_cumsum_exp(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - LN_2).abs() < 1e-15);
        assert!((out[2] - 3f64.ln()).abs() < 1e-15);
        assert_eq!(log_cumsum_exp(&[-3.25]).unwrap(), vec![-3.25]);
    }

    #[test]
    fn log_cumsum_exp_matches_compensated_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(64);
        for _ in 0..20 {
            let values: Vec<f64> = (0..64).map(|_| rng.random_range(-40.0..40.0)).collect();
            let out = log_cumsum_exp(&values).unwrap();
            for (i, &got) in out.iter().enumerate() {
                let want = prefix_oracle(&values, i);
                assert!(
                    ((got - want) / want.abs().max(1.0)).abs() < 1e-12,
                    "prefix {i}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn ladder_examples() {
        let ladder = iwae_ladder(&[1.5; 6]).unwrap();
        for k in 1..=6 {
            assert!((ladder.iwae_at(k) - 1.5).abs() < 1e-14);
        }
        let ladder = iwae_ladder(&[0.0, 3f64.ln()]).unwrap();
        assert_eq!(ladder.iwae_at(1), 0.0);
        assert!((ladder.iwae_at(2) - LN_2).abs() < 1e-15);
        assert_eq!(ladder.deltas().len(), 1);
    }

    #[test]
    fn ladder_matches_naive_per_k() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        let lw: Vec<f64> = (0..32).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ladder = iwae_ladder(&lw).unwrap();
        for k in 1..=32 {
            let mean: f64 = lw[..k].iter().map(|v| v.exp()).sum::<f64>() / k as f64;
            let naive = mean.ln();
            assert!((ladder.iwae_at(k) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn neg_inf_weights_propagate() {
        let ladder = iwae_ladder(&[f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(ladder.iwae_at(1), f64::NEG_INFINITY);
        assert!((ladder.iwae_at(2) + LN_2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn shift_invariance(v in prop::collection::vec(-50.0f64..50.0, 1..40), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = log_sum_exp(&shifted).unwrap();
            let b = log_sum_exp(&v).unwrap() + c;
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn ladder_pointwise_consistency(v in prop::collection::vec(-30.0f64..30.0, 1..40)) {
            let ladder = iwae_ladder(&v).unwrap();
            prop_assert_eq!(ladder.len(), v.len());
            for k in 1..=v.len() {
                let direct = log_sum_exp(&v[..k]).unwrap() - (k as f64).ln();
                prop_assert!((ladder.iwae_at(k) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            }
        }

        #[test]
        fn cumsum_non_decreasing(v in prop::collection::vec(-30.0f64..30.0, 1..40)) {
            let out = log_cumsum_exp(&v).unwrap();
            for w in out.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }
}
