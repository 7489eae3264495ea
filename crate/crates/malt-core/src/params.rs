//! Named trainable tensors with gradient and optimizer-moment slots.
//!
//! `ParamStore` is the unit of checkpointing: every entry carries its value,
//! an accumulated gradient, and the Adam moments `m` and `v`, all of the same
//! shape. Entries live in a `BTreeMap`, so every iteration over parameters is
//! name-sorted and deterministic.

use std::collections::BTreeMap;

use crate::error::{MaltError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl ParamEntry {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        ParamEntry {
            value,
            grad: Tensor::zeros(shape.clone()),
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(MaltError::Contract(format!(
                "parameter {name:?} registered twice"
            )));
        }
        self.entries.insert(name.to_string(), ParamEntry::new(value));
        Ok(())
    }

    /// Register with values drawn from a seeded normal of the given std.
    pub fn insert_normal(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut Rng,
    ) -> Result<()> {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.normal() * std).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert_const(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<()> {
        self.insert(name, Tensor::full(shape, value))
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| MaltError::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| MaltError::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.grad)
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let entry = self.get_mut(name)?;
        if entry.grad.shape() != grad.shape() {
            return Err(MaltError::ShapeMismatch {
                op: "accumulate_grad",
                lhs: crate::error::shape_str(entry.grad.shape()),
                rhs: crate::error::shape_str(grad.shape()),
            });
        }
        for (g, d) in entry.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.data_mut().fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for entry in self.entries.values_mut() {
            for g in entry.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    /// Name-sorted iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters across all entries.
    pub fn total_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Add `delta` to one scalar slot of one parameter (finite differencing).
    pub fn perturb(&mut self, name: &str, index: usize, delta: f64) -> Result<()> {
        let entry = self.get_mut(name)?;
        let data = entry.value.data_mut();
        if index >= data.len() {
            return Err(MaltError::Contract(format!(
                "index {index} out of range for parameter {name:?} ({} elements)",
                data.len()
            )));
        }
        data[index] += delta;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0)).unwrap();
        assert!(store.insert("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn grad_accumulates_and_zeroes() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.0, 0.0])).unwrap();
        store
            .accumulate_grad("w", &Tensor::vector(vec![1.0, 2.0]))
            .unwrap();
        store
            .accumulate_grad("w", &Tensor::vector(vec![0.5, 0.5]))
            .unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[1.5, 2.5]);
        store.zero_grads();
        assert_eq!(store.grad("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn iteration_is_name_sorted() {
        let mut store = ParamStore::new();
        store.insert("b.x", Tensor::scalar(0.0)).unwrap();
        store.insert("a.y", Tensor::scalar(0.0)).unwrap();
        store.insert("a.b", Tensor::scalar(0.0)).unwrap();
        let names: Vec<&String> = store.names().collect();
        assert_eq!(names, ["a.b", "a.y", "b.x"]);
    }
}
