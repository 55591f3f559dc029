//! Parameter updates. Plain SGD is the reference; Adam is opt-in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Parameters, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateDirection {
    /// `θ + lr·g`, used by the actor.
    Ascend,
    /// `θ − lr·g`, used by the critic.
    Descend,
}

impl UpdateDirection {
    fn sign<T: Real>(self) -> T {
        match self {
            UpdateDirection::Ascend => T::one(),
            UpdateDirection::Descend => -T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Adam moment estimates (β₁ 0.9, β₂ 0.999, ε 1e-8).
#[derive(Debug, Clone)]
pub struct Adam<T> {
    first: Vec<T>,
    second: Vec<T>,
    steps: i32,
}

impl<T: Real> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        Self {
            first: vec![T::zero(); len],
            second: vec![T::zero(); len],
            steps: 0,
        }
    }

    fn step(&mut self, values: &mut [T], grads: &[T], lr: T, sign: T) {
        self.steps += 1;
        let (b1, b2) = (T::from_f64(Self::BETA1), T::from_f64(Self::BETA2));
        let c1 = T::one() - b1.powi(self.steps);
        let c2 = T::one() - b2.powi(self.steps);
        let eps = T::from_f64(Self::EPS);
        for (((v, &g), m), s) in values.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            *m = b1 * *m + (T::one() - b1) * g;
            *s = b2 * *s + (T::one() - b2) * g * g;
            *v += sign * lr * (*m / c1) / ((*s / c2).sqrt() + eps);
        }
    }
}

/// Stateful optimizer for one parameter set. Each step returns a new
/// snapshot and leaves the input untouched.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    learning_rate: f64,
    direction: UpdateDirection,
    adam: Option<Adam<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, direction: UpdateDirection, len: usize) -> Self {
        Self {
            learning_rate,
            direction,
            adam: (kind == OptimizerKind::Adam).then(|| Adam::new(len)),
        }
    }

    pub fn step(&mut self, params: &Parameters<T>, grads: &Parameters<T>) -> Result<Parameters<T>> {
        params.check_same_layout(grads)?;
        let mut next = params.clone();
        let lr = T::from_f64(self.learning_rate);
        let sign = self.direction.sign::<T>();
        match &mut self.adam {
            Some(adam) => {
                if adam.first.len() != next.values.len() {
                    return Err(Error::Shape("optimizer state does not match parameters".into()));
                }
                adam.step(&mut next.values, &grads.values, lr, sign)
            }
            None => sgd(&mut next.values, &grads.values, lr, sign),
        }
        Ok(next)
    }
}

fn sgd<T: Real>(values: &mut [T], grads: &[T], lr: T, sign: T) {
    for (v, &g) in values.iter_mut().zip(grads) {
        *v += sign * lr * g;
    }
}

/// One plain SGD step: `params ± learning_rate × gradients`.
pub fn optimizer_step<T: Real>(
    params: &Parameters<T>,
    grads: &Parameters<T>,
    learning_rate: f64,
    direction: UpdateDirection,
) -> Result<Parameters<T>> {
    Optimizer::new(OptimizerKind::Sgd, learning_rate, direction, params.len()).step(params, grads)
}
