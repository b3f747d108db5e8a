use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    ConvKernel,
    Bias,
    BnGamma,
    BnBeta,
    LinearWeight,
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Frozen parameters still receive gradients but are skipped by the optimizer.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, role: ParamRole, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            role,
            value,
            grad,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    /// Swaps in a differently shaped value, resetting the gradient.
    pub fn replace(&mut self, id: ParamId, value: Tensor<T>) {
        let p = &mut self.params[id.0];
        p.grad = Tensor::zeros(value.shape());
        p.value = value;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar values across all parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = momentum * v + grad + weight_decay * value; value -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T, weight_decay: T) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Applies one update and zeroes every gradient. Fails before touching any
    /// value when a trainable gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(bad) = store
            .iter()
            .find(|p| p.trainable && !p.grad.is_finite())
        {
            return Err(Error::NonFiniteGradient(bad.name.clone()));
        }
        self.velocity.resize(store.len(), None);
        for (p, vel) in store.iter_mut().zip(self.velocity.iter_mut()) {
            if p.trainable {
                let v = match vel {
                    Some(v) if v.shape() == p.value.shape() => v,
                    _ => vel.insert(Tensor::zeros(p.value.shape())),
                };
                for ((vi, &g), w) in v
                    .data_mut()
                    .iter_mut()
                    .zip(p.grad.data())
                    .zip(p.value.data_mut())
                {
                    *vi = self.momentum * *vi + g + self.weight_decay * *w;
                    *w -= self.lr * *vi;
                }
            }
            p.grad.fill(T::zero());
        }
        Ok(())
    }
}
