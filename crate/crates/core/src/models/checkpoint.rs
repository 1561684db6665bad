//! JSON checkpoints that round-trip parameters bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LinearGaussianToy, MlpVae, MlpVaeConfig, ParamGroup, ParamSet};
use crate::autodiff::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "sumo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LinearGaussianToy {
        dim: usize,
        #[serde(default)]
        tied_posterior: bool,
    },
    MlpVae(MlpVaeConfig),
    /// Anything else that stores its parameters in a [`ParamSet`].
    Other { name: String, config: serde_json::Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: ModelSpec,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn new(model: ModelSpec, seed: u64, params: &ParamSet) -> Self {
        let params = params
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed,
            model,
            params,
        }
    }

    pub fn param_set(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        for r in &self.params {
            let value = Tensor::new(r.shape.clone(), r.data.clone())
                .map_err(|e| Error::Format(format!("parameter `{}`: {e}", r.name)))?;
            set.push(r.name.clone(), r.group, value);
        }
        Ok(set)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} is not supported",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl LinearGaussianToy {
    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        use super::LatentVariableModel;
        let spec = ModelSpec::LinearGaussianToy {
            dim: self.dim(),
            tied_posterior: self.tied_posterior(),
        };
        Checkpoint::new(spec, seed, self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.model {
            ModelSpec::LinearGaussianToy {
                dim,
                tied_posterior,
            } => {
                let m = Self::from_params(ck.param_set()?, tied_posterior)?;
                if m.dim() != dim {
                    return Err(Error::Format("toy dimension disagrees with parameters".into()));
                }
                Ok(m)
            }
            _ => Err(Error::Format("checkpoint does not hold a linear-Gaussian toy".into())),
        }
    }
}

impl MlpVae {
    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        use super::LatentVariableModel;
        Checkpoint::new(ModelSpec::MlpVae(self.config().clone()), seed, self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match &ck.model {
            ModelSpec::MlpVae(cfg) => Self::from_params(cfg.clone(), ck.param_set()?),
            _ => Err(Error::Format("checkpoint does not hold an MLP-VAE".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LatentVariableModel, ObservationKind};
    use crate::rng::stream;

    #[test]
    fn vae_round_trip_is_bit_exact() {
        let mut rng = stream(9, 0);
        let cfg = MlpVaeConfig {
            data_dim: 3,
            latent_dim: 2,
            hidden: vec![4, 4],
            observation: ObservationKind::Gaussian,
        };
        let vae = MlpVae::new(cfg, &mut rng).unwrap();
        let json = vae.to_checkpoint(9).to_json().unwrap();
        let back = MlpVae::from_checkpoint(&Checkpoint::from_json(&json).unwrap()).unwrap();
        for (a, b) in vae.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(back.to_checkpoint(9).to_json().unwrap(), json);
    }

    #[test]
    fn toy_round_trip_and_mismatch() {
        let mut rng = stream(2, 0);
        let toy = LinearGaussianToy::near_optimal(vec![0.1, 1.0 / 3.0], 0.01, &mut rng).unwrap();
        let ck = toy.to_checkpoint(2);
        assert_eq!(LinearGaussianToy::from_checkpoint(&ck).unwrap(), toy);
        assert!(MlpVae::from_checkpoint(&ck).is_err());
        let mut bad = ck.clone();
        bad.version = 99;
        assert!(Checkpoint::from_json(&bad.to_json().unwrap()).is_err());
    }
}
