use std::collections::HashMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named parameter with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub frozen: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        let zeros = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            frozen: false,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    /// Adds `g` into the gradient of `id`. Frozen entries ignore it.
    pub fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.frozen {
            return Ok(());
        }
        if e.grad.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter `{}` of shape {:?}",
                g.shape(),
                e.name,
                e.grad.shape()
            )));
        }
        e.grad.add_assign(g)
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    /// Freezes (or thaws) every parameter whose name starts with `prefix`.
    /// Returns the number of entries touched.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.frozen = frozen;
            if frozen {
                e.grad.fill(T::zero());
            }
            n += 1;
        }
        n
    }

    /// True when every parameter under `prefix` is frozen (vacuously true
    /// for an empty prefix match).
    pub fn all_frozen(&self, prefix: &str) -> bool {
        self.entries.iter().filter(|e| e.name.starts_with(prefix)).all(|e| e.frozen)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(T::zero());
        }
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Copies values for every name present in both stores. Shapes must
    /// agree; returns the names copied.
    pub fn copy_matching(&mut self, other: &ParamStore<T>, prefix: &str) -> Result<Vec<String>> {
        let mut copied = Vec::new();
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            if let Some(src) = other.get(&e.name) {
                if src.value.shape() != e.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{}` has shape {:?}, checkpoint holds {:?}",
                        e.name,
                        e.value.shape(),
                        src.value.shape()
                    )));
                }
                e.value = src.value.clone();
                copied.push(e.name.clone());
            }
        }
        Ok(copied)
    }
}
