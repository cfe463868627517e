use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    /// Static loss scale; must be a power of two.
    pub loss_scale: f32,
    /// Decoupled weight decay, applied as `lr · wd · theta`.
    pub weight_decay: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss_scale: 1024.0,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "betas ({}, {}) must lie in [0, 1)",
                self.beta1, self.beta2
            ));
        }
        if self.loss_scale < 1.0
            || !self.loss_scale.is_finite()
            || self.loss_scale.log2().fract() != 0.0
        {
            return bad(format!(
                "loss scale {} must be a power of two >= 1",
                self.loss_scale
            ));
        }
        if !self.learning_rate.is_finite()
            || !self.epsilon.is_finite()
            || !self.weight_decay.is_finite()
        {
            return bad("optimizer scalars must be finite".into());
        }
        if self.epsilon < 0.0 || self.weight_decay < 0.0 {
            return bad("epsilon and weight decay must be non-negative".into());
        }
        Ok(())
    }

    /// Bias-correction denominators `(1 - beta1^t, 1 - beta2^t)`.
    pub(crate) fn bias_corrections(&self, step: u32) -> (f32, f32) {
        let t = step as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }
}

/// One Adam update of a single coordinate. Both trainers call this so
/// their arithmetic is identical per element.
#[inline]
pub(crate) fn adam_update(
    cfg: &OptimizerConfig,
    corr: (f32, f32),
    theta: &mut f32,
    m: &mut f32,
    v: &mut f32,
    g: f32,
) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * (g * g);
    let m_hat = *m / corr.0;
    let v_hat = *v / corr.1;
    let update = m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * *theta;
    *theta -= cfg.learning_rate * update;
}
