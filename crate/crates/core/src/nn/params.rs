use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;

/// Named parameter tensors in a stable insertion order, each with a
/// trainable flag. The order is part of the contract: gradient sets,
/// optimizer state and checkpoints all index parameters by position.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    trainable: Vec<bool>,
    index: BTreeMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            trainable: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        self.trainable.push(trainable);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let idx = self.index[name];
        &self.tensors[idx]
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let idx = self.index[name];
        &mut self.tensors[idx]
    }

    pub fn by_index(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn is_trainable(&self, idx: usize) -> bool {
        self.trainable[idx]
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        let idx = self.index[name];
        self.trainable[idx] = trainable;
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for t in &mut self.trainable {
            *t = trainable;
        }
    }

    /// `(name, tensor, trainable)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .zip(&self.trainable)
            .map(|((n, t), &tr)| (n.as_str(), t, tr))
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// SHA-256 over the names, shapes and exact bit patterns of every
    /// parameter accepted by `filter`, in insertion order.
    pub fn fingerprint(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor, _) in self.iter() {
            if !filter(name) {
                continue;
            }
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((tensor.rows as u64).to_le_bytes());
            hasher.update((tensor.cols as u64).to_le_bytes());
            for &v in &tensor.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn fingerprint_all(&self) -> String {
        self.fingerprint(|_| true)
    }
}

/// Gradients aligned with a store's parameter order. Entries stay `None`
/// until some backward pass touches the parameter.
#[derive(Clone, Debug)]
pub struct GradSet {
    grads: Vec<Option<Tensor>>,
}

impl GradSet {
    pub fn empty(store: &ParamStore) -> GradSet {
        GradSet {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, idx: usize) -> Option<&Tensor> {
        self.grads.get(idx).and_then(|g| g.as_ref())
    }

    pub fn accumulate(&mut self, idx: usize, grad: &Tensor) {
        match &mut self.grads[idx] {
            Some(g) => g.add_assign(grad),
            slot => *slot = Some(grad.clone()),
        }
    }

    pub fn add_assign(&mut self, other: &GradSet) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(bg) = b {
                match a {
                    Some(ag) => ag.add_assign(bg),
                    slot => *slot = Some(bg.clone()),
                }
            }
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(k);
        }
    }

    /// Euclidean norm over every gradient value; absent entries count as 0.
    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.grads.iter().flatten() {
            for &v in &g.data {
                sq += v * v;
            }
        }
        sq.sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|t| (i, t)))
    }
}
