//! Named parameter stores, their binding onto a tape, and update rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors owned by one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Weight of shape `shape` drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        let value = Tensor::new(shape.to_vec(), data).expect("shape product matches length");
        self.insert(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Bitwise equality of every value.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.bit_eq(b))
    }

    /// Records every parameter on `tape`; `trainable` controls whether gradients are
    /// accumulated for them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| tape.leaf(v.clone(), trainable))
                .collect(),
        }
    }
}

/// The tape handles of a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Gradient accumulator mirroring one store.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<Tensor>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuffer {
            grads: store.values.iter().map(|v| Tensor::zeros(v.shape())).collect(),
        }
    }

    /// Adds `scale ×` the tape gradients of `bound` into the buffer.
    pub fn accumulate(&mut self, tape: &Tape, bound: &Bound, scale: f32) {
        for (acc, var) in self.grads.iter_mut().zip(&bound.vars) {
            if let Some(g) = tape.grad(*var) {
                acc.add_assign_scaled(g, scale);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }
}

/// Update rule. `Sgd` applies the literal `θ ← θ ∓ lr·∇` step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// Optimizer state for one parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    direction: Direction,
    step: u32,
    moments: Option<(Vec<Tensor>, Vec<Tensor>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32, direction: Direction) -> Self {
        Optimizer {
            kind,
            lr,
            direction,
            step: 0,
            moments: None,
        }
    }

    pub fn learning_rate(&self) -> f32 {
        self.lr
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        let sign = match self.direction {
            Direction::Descent => -1.0,
            Direction::Ascent => 1.0,
        };
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (value, g) in store.values.iter_mut().zip(&grads.grads) {
                    value.add_assign_scaled(g, sign * self.lr);
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = self.moments.get_or_insert_with(|| {
                    let zeros: Vec<Tensor> =
                        store.values.iter().map(|t| Tensor::zeros(t.shape())).collect();
                    (zeros.clone(), zeros)
                });
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((value, g), m), v) in store
                    .values
                    .iter_mut()
                    .zip(&grads.grads)
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    for (((x, &gi), mi), vi) in value
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                        let update = (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                        *x += sign * self.lr * update;
                    }
                }
            }
        }
    }
}
