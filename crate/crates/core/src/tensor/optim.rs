use serde::{Deserialize, Serialize};

use super::{Float, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adaptive-moment optimizer with bias-corrected first and second moments.
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first: ParamSet<T>,
    second: ParamSet<T>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        Self {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. A non-finite gradient aborts the step before any
    /// parameter or moment is touched.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), (gname, g)) in params.iter().zip(grads.iter()) {
            if name != gname || p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient {gname} {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - c.beta1.powi(t);
        let correction2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of_f64(c.beta1), T::of_f64(c.beta2));
        let (one_b1, one_b2) = (T::of_f64(1.0 - c.beta1), T::of_f64(1.0 - c.beta2));
        let lr = T::of_f64(c.learning_rate);
        let decay = T::of_f64(c.learning_rate * c.weight_decay);
        let (inv_c1, inv_c2) = (T::of_f64(1.0 / correction1), T::of_f64(1.0 / correction2));
        let eps = T::of_f64(c.epsilon);

        let moments = self.first.iter_mut().zip(self.second.iter_mut());
        for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments)
        {
            update(p, g, m, v, |p, g, m, v| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m * inv_c1;
                let v_hat = *v * inv_c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps) + decay * *p;
            });
        }
        Ok(())
    }
}

fn update<T: Float>(
    p: &mut Tensor<T>,
    g: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    f: impl Fn(&mut T, T, &mut T, &mut T),
) {
    let iter = p
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
    for ((p, &g), (m, v)) in iter {
        f(p, g, m, v);
    }
}
