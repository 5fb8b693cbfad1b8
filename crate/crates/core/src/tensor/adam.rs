use serde::{Deserialize, Serialize};

use super::Parameter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments live on each [`Parameter`]; the
/// optimizer only tracks the step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and resets its gradient.
    ///
    /// All gradients are validated before anything is written, so a
    /// non-finite gradient leaves every parameter untouched.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Parameter)>,
    ) -> Result<()> {
        let params: Vec<(&str, &mut Parameter)> = params.into_iter().collect();
        for (name, p) in &params {
            if let Some(position) = p.grad.first_non_finite() {
                return Err(Error::NonFiniteGradient {
                    name: name.to_string(),
                    position,
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (_, p) in params {
            let n = p.value.len();
            if p.moments.first.len() != n {
                p.moments.first = vec![0.0; n];
                p.moments.second = vec![0.0; n];
            }
            let values = p.value.as_mut_slice();
            let grads = p.grad.as_mut_slice();
            let m = &mut p.moments.first;
            let v = &mut p.moments.second;
            for i in 0..n {
                let g = grads[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                grads[i] = 0.0;
            }
        }
        Ok(())
    }
}
