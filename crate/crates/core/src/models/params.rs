use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Which role a parameter plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Generative parameters θ (prior and likelihood).
    Decoder,
    /// Proposal parameters φ.
    Encoder,
    /// Held fixed by every training loop.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Which parameter groups are bound as differentiable leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    None,
    Decoder,
    Encoder,
    Both,
}

impl GradTarget {
    fn wants(self, group: ParamGroup) -> bool {
        matches!(
            (self, group),
            (GradTarget::Both, ParamGroup::Decoder | ParamGroup::Encoder)
                | (GradTarget::Decoder, ParamGroup::Decoder)
                | (GradTarget::Encoder, ParamGroup::Encoder)
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> usize {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Indices of the parameters in `group`, in storage order.
    pub fn indices(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].group == group)
            .collect()
    }

    pub fn set_group(&mut self, name: &str, group: ParamGroup) -> Result<()> {
        let p = self
            .by_name_mut(name)
            .ok_or_else(|| Error::domain(format!("no parameter named `{name}`")))?;
        p.group = group;
        Ok(())
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter on `tape`; groups selected by `target` become
    /// differentiable leaves, the rest constants.
    pub fn bind<'t>(&self, tape: &'t Tape, target: GradTarget) -> BoundParams<'t> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if target.wants(p.group) {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Adds `alpha * delta[j]` to the `j`-th parameter of `group`.
    pub fn apply_update(&mut self, group: ParamGroup, alpha: f64, delta: &[Tensor]) -> Result<()> {
        let idx = self.indices(group);
        if idx.len() != delta.len() {
            return Err(Error::shape(
                "apply_update",
                format!("{} parameters vs {} updates", idx.len(), delta.len()),
            ));
        }
        for (i, d) in idx.into_iter().zip(delta) {
            self.params[i].value.axpy(alpha, d)?;
        }
        Ok(())
    }
}

/// Parameters recorded on one tape, indexed like the [`ParamSet`] they came
/// from.
pub struct BoundParams<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn var(&self, i: usize) -> Var<'t> {
        self.vars[i]
    }

    /// Gradients of `output` for the parameters of `group`.
    pub fn grads(&self, params: &ParamSet, group: ParamGroup, output: Var<'t>) -> Result<Vec<Tensor>> {
        let leaves: Vec<Var<'t>> = params.indices(group).into_iter().map(|i| self.vars[i]).collect();
        crate::autodiff::grad(output, &leaves)
    }
}
