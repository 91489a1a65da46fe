//! Named parameter collections and their checkpoint form.

use crate::data::{Checkpoint, DataError, Entry};

use super::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Enters every parameter into `g`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn write_to(&self, ck: &mut Checkpoint, prefix: &str) {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            ck.push(Entry::f64(format!("{prefix}{n}"), t));
        }
    }

    /// Reads `names` (prefixed) back out of a checkpoint, in order.
    pub fn read_from(ck: &Checkpoint, prefix: &str, names: &[String]) -> Result<Self, DataError> {
        let mut out = Self::new();
        for n in names {
            out.push(n.clone(), ck.tensor(&format!("{prefix}{n}"))?);
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}
