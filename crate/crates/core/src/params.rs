//! Named parameter storage with gradient buffers.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-width of the uniform initialisation interval.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Parameters in registration order. Registration order is also the
/// serialisation and initialisation order, so it must be stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Registers a parameter drawn uniformly from `[-INIT_RANGE, INIT_RANGE]`.
    pub fn register_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        rng: &mut R,
    ) -> ParamId {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        self.register(name, Tensor::new(shape, data).expect("valid parameter shape"))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale · grad` into the stored gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64], scale: f64) {
        let dst = self.params[id.0].grad.data_mut();
        assert_eq!(dst.len(), grad.len());
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += scale * g;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(
            self.params
                .iter()
                .flat_map(|p| p.grad.data().iter())
                .map(|g| g * g)
                .sum(),
        )
    }

    /// Rescales every gradient so the global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in &mut self.params {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Plain SGD update: `value -= lr · grad`.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in &mut self.params {
            let grad = p.grad.data();
            for (v, g) in p.value.data_mut().iter_mut().zip(grad) {
                *v -= lr * g;
            }
        }
    }

    /// Replaces the value of an existing parameter, checking its shape.
    pub fn load(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        let expected = self.params[id.0].value.shape().to_vec();
        if value.shape() != expected.as_slice() {
            return Err(Error::IncompatibleTensor {
                name: name.to_string(),
                found: value.shape().to_vec(),
                expected,
            });
        }
        self.params[id.0].value = value;
        Ok(())
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
