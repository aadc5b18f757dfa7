use serde::{Deserialize, Serialize};

use super::policy::{GradientBundle, PolicyParams};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: GradientBundle,
    pub second_moment: GradientBundle,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &PolicyParams, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: GradientBundle::zeros_like(params),
            second_moment: GradientBundle::zeros_like(params),
            step: 0,
        }
    }

    /// In-place update with bias correction; log-std is re-clamped afterwards.
    pub fn apply(&mut self, params: &mut PolicyParams, grads: &GradientBundle) -> Result<()> {
        if !grads.same_shape(params)
            || !self.first_moment.same_shape(params)
            || !self.second_moment.same_shape(params)
        {
            return Err(contract("adam: gradient/moment shape differs from params"));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.first_moment.values_mut())
            .zip(self.second_moment.values_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        params.clamp_log_std();
        Ok(())
    }
}

/// Pure form of [`AdamState::apply`].
pub fn adam_step(
    params: &PolicyParams,
    grads: &GradientBundle,
    state: &AdamState,
) -> Result<(PolicyParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p, grads)?;
    Ok((p, s))
}
