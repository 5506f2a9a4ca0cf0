//! First-order parameter updates shared by every training loop.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum with the given coefficient.
    Momentum(f64),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Momentum(0.9)
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "momentum" | "sgd+momentum" => Ok(Optimizer::Momentum(0.9)),
            other => Err(Error::Config(format!(
                "unknown optimizer `{}` (sgd, momentum)",
                other
            ))),
        }
    }
}

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: Optimizer,
    learning_rate: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, learning_rate: f64, shapes: &[&Tensor]) -> Self {
        Self {
            kind,
            learning_rate,
            velocity: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        let lr = self.learning_rate;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            match self.kind {
                Optimizer::Sgd => {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
                Optimizer::Momentum(mu) => {
                    for ((w, d), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vel = mu * *vel + d;
                        *w -= lr * *vel;
                    }
                }
            }
        }
    }
}
