//! Trainable parameters, non-trainable buffers, and seeded initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Buffers such as batchnorm running statistics are stored with `requires_grad = false`.
    pub requires_grad: bool,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`; for layers feeding a relu.
    KaimingUniform { fan_in: usize },
    /// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
    XavierUniform { fan_in: usize, fan_out: usize },
    Zeros,
    Constant(f64),
}

#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter with an explicit value.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, requires_grad: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            requires_grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_requires_grad(&mut self, id: ParamId, flag: bool) {
        self.params[id.0].requires_grad = flag;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Number of trainable scalars.
    pub fn count_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad)
            .map(Parameter::numel)
            .sum()
    }

    /// Trainable scalars whose name starts with `prefix`.
    pub fn count_trainable_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad && p.name.starts_with(prefix))
            .map(Parameter::numel)
            .sum()
    }

    /// Overwrites a buffer (or parameter) value in place.
    pub fn assign(&mut self, id: ParamId, data: &[f64]) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.numel() != data.len() {
            return Err(arg_err(
                "assign",
                format!("{} expects {} values, got {}", p.name, p.value.numel(), data.len()),
            ));
        }
        p.value.data_mut().copy_from_slice(data);
        Ok(())
    }
}

/// Creates parameters in a store, drawing initial values from a seeded stream.
///
/// With `rng == None` every tensor stays zero-filled (and, for large tensors, lazily
/// paged), which is what shape-only builds used for parameter counting want.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: Option<ChaCha8Rng>,
}

impl<'a> ParamBuilder<'a> {
    pub fn seeded(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn shapes_only(store: &'a mut ParamStore) -> Self {
        Self { store, rng: None }
    }

    pub fn param(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let mut t = Tensor::zeros(shape);
        match (init, self.rng.as_mut()) {
            (Init::Zeros, _) => {}
            (Init::Constant(c), _) => t.data_mut().iter_mut().for_each(|v| *v = c),
            (_, None) => {}
            (Init::KaimingUniform { fan_in }, Some(rng)) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                fill_uniform(rng, t.data_mut(), bound);
            }
            (Init::XavierUniform { fan_in, fan_out }, Some(rng)) => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                fill_uniform(rng, t.data_mut(), bound);
            }
        }
        self.store.insert(name, t, true)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], fill: f64) -> ParamId {
        self.store.insert(name, Tensor::full(shape, fill), false)
    }
}

fn fill_uniform(rng: &mut ChaCha8Rng, out: &mut [f64], bound: f64) {
    for v in out {
        *v = rng.gen_range(-bound..bound);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_clears_everything() {
        let mut store = ParamStore::new();
        let mut b = ParamBuilder::seeded(&mut store, 1);
        let id = b.param("w", &[3, 2], Init::KaimingUniform { fan_in: 3 });
        store.get_mut(id).grad.data_mut()[4] = 2.0;
        store.zero_grad();
        assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(store.get(id).grad.shape(), store.get(id).value.shape());
    }

    #[test]
    fn init_bounds_and_determinism() {
        let draw = |seed| {
            let mut store = ParamStore::new();
            let mut b = ParamBuilder::seeded(&mut store, seed);
            let id = b.param("w", &[64, 16], Init::KaimingUniform { fan_in: 16 });
            store.value(id).clone()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        assert_ne!(a, draw(4));
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn buffers_are_not_counted() {
        let mut store = ParamStore::new();
        let mut b = ParamBuilder::shapes_only(&mut store);
        b.param("bn/gamma", &[4], Init::Constant(1.0));
        b.buffer("bn/running_mean", &[4], 0.0);
        assert_eq!(store.count_trainable(), 4);
        assert_eq!(store.len(), 2);
    }
}
