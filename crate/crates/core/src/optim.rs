//! AdamW with decoupled weight decay, cosine learning-rate decay and
//! layer-wise learning-rate decay.

use crate::error::{Error, Result};

/// Optimizer hyperparameters. Defaults follow the training settings used
/// throughout: betas 0.9/0.98, epsilon 1e-6, weight decay 0.02, no warmup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-6,
            weight_decay: 0.02,
            warmup_steps: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::BadParams(format!("optimizer config {self:?}")));
        }
        Ok(())
    }

    /// Copy with weight decay removed, for excluded parameter groups.
    pub fn without_decay(&self) -> Self {
        Self {
            weight_decay: 0.0,
            ..*self
        }
    }
}

/// Per-tensor AdamW moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamWState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One AdamW update: bias-corrected moments plus decoupled weight decay
/// (`theta *= 1 - lr * wd`, applied separately from the adaptive term).
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamWState,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {} grads {} state {}",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::BadParams(format!("lr {lr}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let decay_factor = 1.0 - lr * cfg.weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] = params[i] * decay_factor - lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Cosine decay: lr(t) = peak * 0.5 * (1 + cos(pi * t / T)).
pub fn cosine_lr(step: u64, total_steps: u64, peak: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::BadStep {
            step,
            total: total_steps,
        });
    }
    let frac = step as f64 / total_steps as f64;
    Ok(peak * (0.5 * (1.0 + (std::f64::consts::PI * frac).cos())))
}

/// Cosine decay with an optional linear warmup prefix (warmup defaults to 0).
pub fn scheduled_lr(step: u64, total_steps: u64, peak: f64, warmup_steps: u64) -> Result<f64> {
    if warmup_steps == 0 {
        return cosine_lr(step, total_steps, peak);
    }
    if warmup_steps >= total_steps {
        return Err(Error::BadParams(format!(
            "warmup {warmup_steps} >= total steps {total_steps}"
        )));
    }
    if step < warmup_steps {
        return Ok(peak * (step + 1) as f64 / warmup_steps as f64);
    }
    cosine_lr(step - warmup_steps, total_steps - warmup_steps, peak)
}

/// Layer-wise decay with the output layer at full rate:
/// lr_l = peak * decay^(L - 1 - l).
pub fn layerwise_lr(peak: f64, decay: f64, layer: usize, num_layers: usize) -> Result<f64> {
    if layer >= num_layers {
        return Err(Error::BadLayer { layer, num_layers });
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::BadParams(format!("layerwise decay {decay}")));
    }
    Ok(peak * decay.powi((num_layers - 1 - layer) as i32))
}
