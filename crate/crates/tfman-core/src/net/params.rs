use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor. The name encodes the module path (for example
/// `fmf.srnl.theta.weight`), so checkpoints are order-independent and
/// subtree counts can be taken by prefix.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Owner of all model parameters, in registration order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id.0);
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn total_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Scalar count of every parameter whose name starts with `prefix`.
    pub fn scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Push every parameter onto a tape, once, in registration order.
    /// Shared weights therefore map to a single node and their gradients
    /// accumulate across all uses.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let nodes = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect();
        BoundParams { nodes }
    }

    /// Copy gradients from the tape back into the store's `grad` buffers.
    /// Parameters the backward pass never reached keep `None`.
    pub fn collect_grads(&mut self, tape: &Tape<T>, bound: &BoundParams) {
        for (i, p) in self.params.iter_mut().enumerate() {
            p.grad = tape.grad(bound.nodes[i]).cloned();
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.iter_mut() {
            p.grad = None;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(|g| g.cast()),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Tape nodes of the bound parameters, indexed by [`ParamId`].
pub struct BoundParams {
    nodes: Vec<NodeId>,
}

impl BoundParams {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// Rebind from externally created leaves, one per parameter in
    /// registration order (used by the gradient checker).
    pub fn from_nodes(nodes: Vec<NodeId>) -> Self {
        BoundParams { nodes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_must_be_unique() {
        let mut store = ParamStore::<f32>::new();
        store.register("a.weight", Tensor::zeros(&[2])).unwrap();
        assert!(store.register("a.weight", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn prefix_counts() {
        let mut store = ParamStore::<f32>::new();
        store.register("fe.w", Tensor::zeros(&[4])).unwrap();
        store.register("fmf.alpha.0", Tensor::zeros(&[6])).unwrap();
        store.register("fmf.alpha.1", Tensor::zeros(&[6])).unwrap();
        assert_eq!(store.total_scalars(), 16);
        assert_eq!(store.scalars_with_prefix("fmf.alpha"), 12);
    }

    #[test]
    fn grads_flow_back_through_shared_binding() {
        let mut store = ParamStore::<f64>::new();
        let w = store
            .register("w", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, true);
        // Use the same parameter twice; its gradient must accumulate to 2.
        let a = tape.sum_all(bound.node(w));
        let b = tape.sum_all(bound.node(w));
        let s = tape.add(a, b).unwrap();
        tape.backward(s).unwrap();
        store.collect_grads(&tape, &bound);
        assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[2.0, 2.0]);
    }
}
