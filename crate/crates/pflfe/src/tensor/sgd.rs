//! SGD with momentum over named tensors.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Momentum-SGD state. Velocity buffers are keyed by parameter name and
/// allocated on first use, shape-congruent with their parameters.
#[derive(Clone, Debug)]
pub struct SgdState {
    learning_rate: f64,
    momentum: f64,
    velocity: HashMap<String, Vec<f64>>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a finite non-negative float, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            velocity: HashMap::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Drops all velocity buffers. Aggregation is a synchronization barrier:
    /// after shared parameters are replaced, accumulated momentum no longer
    /// points anywhere meaningful, so local optimization restarts cleanly.
    pub fn reset_velocity(&mut self) {
        self.velocity.clear();
    }

    /// Applies `v <- momentum*v + grad; theta <- theta - lr*v` to every given
    /// parameter and clears its gradient. Errors if any gradient is missing
    /// or non-finite, leaving all parameters untouched in that case.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor)>,
    {
        let pairs: Vec<(&str, &mut Tensor)> = params.into_iter().collect();
        for (name, t) in &pairs {
            match t.grad() {
                None => {
                    return Err(Error::Gradient(format!("missing gradient for {name}")));
                }
                Some(g) if !g.iter().all(|v| v.is_finite()) => {
                    return Err(Error::Gradient(format!("non-finite gradient for {name}")));
                }
                _ => {}
            }
        }
        for (name, t) in pairs {
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; t.len()]);
            debug_assert_eq!(v.len(), t.len());
            let grad = t.grad().expect("checked above");
            for (vi, gi) in v.iter_mut().zip(grad) {
                *vi = self.momentum * *vi + gi;
            }
            let lr = self.learning_rate;
            for (xi, vi) in t.data_mut().iter_mut().zip(v.iter()) {
                *xi -= lr * vi;
            }
            t.clear_grad();
        }
        Ok(())
    }
}
