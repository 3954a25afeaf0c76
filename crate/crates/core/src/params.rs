use crate::autograd::{Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

/// Tape handles for every parameter, in `ParamSet` order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push((name.into(), tensor.with_grad()));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.entries.iter().map(|(_, t)| tape.leaf(t.clone())).collect())
    }

    /// Adds the tape's leaf gradients into each parameter's grad buffer.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &Bound) {
        for ((_, t), v) in self.entries.iter_mut().zip(&bound.0) {
            if let Some(g) = tape.grad(*v) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().for_each(Tensor::zero_grad);
    }

    /// Replaces values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(invalid!("expected {} parameters, found {}", self.len(), other.len()));
        }
        for (name, t) in &mut self.entries {
            let id = other.find(name).ok_or_else(|| invalid!("parameter {name} missing"))?;
            let src = other.get(id);
            if src.shape() != t.shape() {
                return Err(invalid!("parameter {name}: shape {:?} vs {:?}", src.shape(), t.shape()));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}
