//! Named parameter storage and deterministic initialisation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub type ParamId = usize;

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    /// Stable dotted path, e.g. `stack.0.hg.level.1.down.p2.conv.weight`.
    pub name: String,
    pub tensor: Tensor<T>,
    pub grad: Tensor<T>,
    /// Running statistics are stored as non-trainable parameters.
    pub trainable: bool,
}

/// Parameters in registration order. The order is a pure function of the
/// model configuration and defines the checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: String, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(tensor.shape());
        self.params.push(Parameter {
            name,
            tensor,
            grad,
            trainable,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| &self.params[id])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.id(name).map(move |id| &mut self.params[id])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar values, including non-trainable ones.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Ordered `(name, shape)` list.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape().to_vec()))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Converts every tensor to another element type. Gradients are reset.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.register(p.name.clone(), p.tensor.cast(), p.trainable)
                .expect("names already unique");
        }
        out
    }

    /// Replaces all values with those of `other`, which must have the same
    /// manifest.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.manifest() != other.manifest() {
            return Err(Error::Checkpoint(
                "parameter manifest does not match the model architecture".into(),
            ));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.tensor = src.tensor.clone();
        }
        Ok(())
    }
}

/// Registers parameters under a dotted prefix while drawing initial values
/// from a seeded stream.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: impl std::fmt::Display) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{}", self.prefix, leaf)
        }
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f64, trainable: bool) -> Result<ParamId> {
        let name = self.full_name(leaf);
        self.store
            .register(name, Tensor::full(shape, T::from_f64_lossy(value)), trainable)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn fan_in_uniform(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..=bound)));
        let name = self.full_name(leaf);
        self.store.register(name, t, true)
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.register("a".into(), Tensor::zeros(&[1]), true).unwrap();
        assert!(s.register("a".into(), Tensor::zeros(&[1]), true).is_err());
    }

    #[test]
    fn scoped_names_are_dotted() {
        let mut s = ParamStore::<f32>::new();
        let mut rng = seeded_rng(0);
        let mut b = Builder::new(&mut s, &mut rng);
        let mut outer = b.scope("stack");
        let mut inner = outer.scope(0);
        inner.constant("gamma", &[2], 1.0, true).unwrap();
        assert!(s.by_name("stack.0.gamma").is_some());
    }
}
