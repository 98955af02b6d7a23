//! Named parameter storage shared by models and optimizers.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter tensors. Registration order is the
/// checkpoint order, so layouts are reproducible run to run.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name: {name}"
            )));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.values
    }

    /// Insert every parameter as a gradient-requiring leaf of `g`.
    pub fn attach(&self, g: &mut Graph) -> Attached {
        let ids = self
            .values
            .iter()
            .map(|t| g.leaf(t.clone(), true))
            .collect();
        Attached { ids }
    }

    /// Insert every parameter as a constant (frozen) leaf of `g`.
    pub fn attach_frozen(&self, g: &mut Graph) -> Attached {
        let ids = self.values.iter().map(|t| g.constant(t.clone())).collect();
        Attached { ids }
    }

    /// Collect gradients (by parameter order) after a backward pass.
    pub fn gradients<'g>(&self, g: &'g Graph, attached: &Attached) -> Vec<Option<&'g [f64]>> {
        attached.ids.iter().map(|&id| g.grad(id)).collect()
    }

    /// Overwrite values from a name -> tensor list (e.g. a loaded checkpoint).
    pub fn load_values(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in entries {
            let Some(&i) = self.index.get(name) else {
                return Err(Error::Checkpoint(format!(
                    "checkpoint contains unknown parameter {name}"
                )));
            };
            if self.values[i].shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: expected {:?}, got {:?}",
                    self.values[i].shape(),
                    tensor.shape()
                )));
            }
            self.values[i] = tensor.clone();
        }
        Ok(())
    }
}

/// Node ids of one attachment of a `ParamStore` to a graph.
pub struct Attached {
    ids: Vec<NodeId>,
}

impl Attached {
    pub fn from_ids(ids: Vec<NodeId>) -> Self {
        Attached { ids }
    }

    pub fn node(&self, p: ParamId) -> NodeId {
        self.ids[p.0]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}
