//! Distributions over the roulette truncation index `K`.
//!
//! Indices are 1-based throughout: `survival(1) == 1` and `K >= 1`.
//!
//! The default family is the zeta distribution with a geometric tail:
//! `P(K >= k) = 1/k` for `k < alpha` and `(1/alpha) * rate^(k - alpha)`
//! beyond, which keeps the expected number of terms finite (about 5.08 for
//! `alpha = 80, rate = 0.9`).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_ALPHA: u64 = 80;
pub const DEFAULT_TAIL_RATE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TruncationDistribution {
    ZetaTail { alpha: u64, tail_rate: f64 },
    Geometric { rate: f64 },
    /// Point mass at `k0`. Its survival hits zero, so it cannot drive an
    /// unbiased roulette estimator; it exists for compute-matched baselines
    /// and tests.
    Fixed { k0: u64 },
}

impl Default for TruncationDistribution {
    fn default() -> Self {
        TruncationDistribution::ZetaTail {
            alpha: DEFAULT_ALPHA,
            tail_rate: DEFAULT_TAIL_RATE,
        }
    }
}

fn check_rate(rate: f64, what: &str) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::domain(format!("{what} must lie in (0, 1), got {rate}")));
    }
    Ok(())
}

impl TruncationDistribution {
    pub fn zeta_tail(alpha: u64, tail_rate: f64) -> Result<Self> {
        if alpha < 1 {
            return Err(Error::domain("zeta_tail alpha must be a positive integer"));
        }
        check_rate(tail_rate, "zeta_tail rate")?;
        Ok(TruncationDistribution::ZetaTail { alpha, tail_rate })
    }

    pub fn geometric(rate: f64) -> Result<Self> {
        check_rate(rate, "geometric rate")?;
        Ok(TruncationDistribution::Geometric { rate })
    }

    pub fn fixed(k0: u64) -> Result<Self> {
        if k0 < 1 {
            return Err(Error::domain("fixed K0 must be a positive integer"));
        }
        Ok(TruncationDistribution::Fixed { k0 })
    }

    /// Whether `P(K >= k) > 0` for every `k`, as roulette estimation requires.
    pub fn has_full_support(&self) -> bool {
        !matches!(self, TruncationDistribution::Fixed { .. })
    }

    pub fn require_full_support(&self) -> Result<()> {
        if self.has_full_support() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "{self} has survival reaching zero; roulette estimation needs P(K >= k) > 0 for all k"
            )))
        }
    }

    fn survival_unchecked(&self, k: u64) -> f64 {
        match *self {
            TruncationDistribution::ZetaTail { alpha, tail_rate } => {
                if k < alpha {
                    1.0 / k as f64
                } else {
                    tail_rate.powf((k - alpha) as f64) / alpha as f64
                }
            }
            TruncationDistribution::Geometric { rate } => rate.powf((k - 1) as f64),
            TruncationDistribution::Fixed { k0 } => {
                if k <= k0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `P(K >= k)` for `k >= 1`.
    pub fn survival(&self, k: u64) -> Result<f64> {
        if k < 1 {
            return Err(Error::domain("survival is defined for k >= 1"));
        }
        Ok(self.survival_unchecked(k))
    }

    /// `P(K = k) = P(K >= k) - P(K >= k + 1)`.
    pub fn pmf(&self, k: u64) -> Result<f64> {
        Ok(self.survival(k)? - self.survival_unchecked(k + 1))
    }

    /// `E[K] = Σ_{k>=1} P(K >= k)`, summed in closed form.
    pub fn expected_terms(&self) -> f64 {
        match *self {
            TruncationDistribution::ZetaTail { alpha, tail_rate } => {
                let harmonic: f64 = (1..alpha).map(|k| 1.0 / k as f64).sum();
                harmonic + (1.0 / alpha as f64) / (1.0 - tail_rate)
            }
            TruncationDistribution::Geometric { rate } => 1.0 / (1.0 - rate),
            TruncationDistribution::Fixed { k0 } => k0 as f64,
        }
    }

    /// Inverse-survival sampling: the smallest `k` with `P(K >= k + 1) <= u`
    /// for `u` uniform on `(0, 1]`. Consumes exactly one `u64` from `rng`.
    pub fn sample(&self, rng: &mut dyn RngCore) -> u64 {
        let u = 1.0 - rng.random::<f64>();
        self.quantile(u)
    }

    /// The `K` selected by a given uniform draw `u ∈ (0, 1]`.
    pub fn quantile(&self, u: f64) -> u64 {
        // `j` is the first index whose survival drops to u or below; K = j - 1.
        let guess: f64 = match *self {
            TruncationDistribution::Fixed { k0 } => return k0,
            TruncationDistribution::ZetaTail { alpha, tail_rate } => {
                let head = (1.0 / u).ceil();
                if head < alpha as f64 {
                    head
                } else {
                    alpha as f64 + ((u * alpha as f64).ln() / tail_rate.ln()).ceil().max(0.0)
                }
            }
            TruncationDistribution::Geometric { rate } => 1.0 + (u.ln() / rate.ln()).ceil(),
        };
        let mut j = if guess.is_finite() { (guess as u64).max(2) } else { u64::MAX / 2 };
        // Repair floating-point rounding at bucket boundaries.
        while j > 2 && self.survival_unchecked(j - 1) <= u {
            j -= 1;
        }
        while self.survival_unchecked(j) > u {
            j += 1;
        }
        j - 1
    }
}

impl fmt::Display for TruncationDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruncationDistribution::ZetaTail { alpha, tail_rate } => {
                write!(f, "zeta_tail(alpha={alpha},rate={tail_rate})")
            }
            TruncationDistribution::Geometric { rate } => write!(f, "geometric(rate={rate})"),
            TruncationDistribution::Fixed { k0 } => write!(f, "fixed({k0})"),
        }
    }
}

impl FromStr for TruncationDistribution {
    type Err = Error;

    /// Parses `zeta_tail(alpha=80,rate=0.9)`, `geometric(rate=0.5)` or
    /// `fixed(7)`. Omitted zeta_tail arguments take their defaults.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Format(format!("truncation distribution `{s}`: {why}"));
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (name, rest) = compact.split_once('(').ok_or_else(|| bad("expected name(args)"))?;
        let args = rest.strip_suffix(')').ok_or_else(|| bad("missing `)`"))?;
        let mut named = Vec::new();
        let mut positional = Vec::new();
        for arg in args.split(',').filter(|a| !a.is_empty()) {
            match arg.split_once('=') {
                Some((k, v)) => named.push((k.to_string(), v.to_string())),
                None => positional.push(arg.to_string()),
            }
        }
        let get = |key: &str| named.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let parse_f = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("bad number `{v}`")));
        let parse_u = |v: &str| v.parse::<u64>().map_err(|_| bad(&format!("bad integer `{v}`")));
        match name {
            "zeta_tail" => {
                let alpha = get("alpha").map(parse_u).transpose()?.unwrap_or(DEFAULT_ALPHA);
                let rate = get("rate").map(parse_f).transpose()?.unwrap_or(DEFAULT_TAIL_RATE);
                TruncationDistribution::zeta_tail(alpha, rate)
            }
            "geometric" => {
                let rate = get("rate")
                    .or(positional.first().map(String::as_str))
                    .ok_or_else(|| bad("geometric needs rate"))?;
                TruncationDistribution::geometric(parse_f(rate)?)
            }
            "fixed" => {
                let k0 = get("k")
                    .or(get("k0"))
                    .or(positional.first().map(String::as_str))
                    .ok_or_else(|| bad("fixed needs K0"))?;
                TruncationDistribution::fixed(parse_u(k0)?)
            }
            other => Err(bad(&format!("unknown family `{other}`"))),
        }
    }
}
