use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Named tensors in insertion order.
///
/// Used both for trainable parameters (every entry `requires_grad`) and for
/// non-trainable buffers such as normalization running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Element = f32> {
    entries: IndexMap<String, Tensor<E>>,
}

/// Running statistics and other state saved with a model but not optimized.
pub type BufferStore<E = f32> = ParamStore<E>;

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    /// Adds a new entry; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Replaces an existing entry, keeping its position.
    pub fn replace(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape(format!(
                "{name}: expected {:?}, got {:?}",
                slot.shape(),
                tensor.shape()
            )));
        }
        *slot = tensor;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<E>> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.entries.values().for_each(Tensor::zero_grad);
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast::<F>())).collect(),
        }
    }

    /// A store with the same names and new values, in the same order.
    pub fn with_tensors(&self, tensors: Vec<Tensor<E>>) -> Result<Self> {
        if tensors.len() != self.len() {
            return Err(Error::Contract(format!(
                "expected {} tensors, got {}",
                self.len(),
                tensors.len()
            )));
        }
        let mut out = self.clone();
        for (name, t) in self.names().zip(tensors) {
            out.replace(name, t)?;
        }
        Ok(out)
    }
}

/// Seeded parameter initialization.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in ±√(6 / fan_in).
    pub fn fan_in_uniform<E: Element>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<E> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| E::of(self.rng.random_range(-bound..bound))).collect();
        Tensor::from_vec(shape, data).expect("finite init").into_param()
    }

    pub fn normal<E: Element>(&mut self, shape: &[usize], std: f64) -> Tensor<E> {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| E::of(dist.sample(&mut self.rng))).collect();
        Tensor::from_vec(shape, data).expect("finite init").into_param()
    }

    pub fn constant<E: Element>(&mut self, shape: &[usize], value: f64) -> Tensor<E> {
        Tensor::full(shape, E::of(value)).into_param()
    }
}
