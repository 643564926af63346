//! AdamW with a linear warmup / linear decay schedule.

use serde::{Deserialize, Serialize};

use super::params::{Params, LM_HEAD_TENSORS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: Some(1.0),
        }
    }
}

/// Ramps from 0 to `base_lr` over `warmup` steps, then decays linearly to 0
/// at `total` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub base_lr: f64,
    pub warmup: f64,
    pub total: f64,
}

impl LinearSchedule {
    pub fn lr_at(&self, step: f64) -> f64 {
        if step < self.warmup {
            self.base_lr * step / self.warmup
        } else if self.total <= self.warmup {
            self.base_lr
        } else {
            self.base_lr * ((self.total - step) / (self.total - self.warmup)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &Params) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

/// Fails with the name of the first tensor holding a NaN or infinity.
pub fn check_finite(grads: &Params) -> Result<()> {
    for (name, t) in grads.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    Ok(())
}

fn global_norm(grads: &Params, skip_lm: bool) -> f64 {
    grads
        .tensors()
        .iter()
        .filter(|(n, _)| !(skip_lm && LM_HEAD_TENSORS.contains(&n.as_str())))
        .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// One AdamW update. LM-head tensors are skipped when `lm_frozen`.
pub fn adamw_step(
    params: &mut Params,
    grads: &Params,
    state: &mut AdamState,
    cfg: &AdamWConfig,
    lr: f64,
    lm_frozen: bool,
) -> Result<()> {
    check_finite(grads)?;
    let clip = match cfg.max_grad_norm {
        Some(max) => {
            let norm = global_norm(grads, lm_frozen);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let iter = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for ((((name, mut p), (_, g)), (_, mut m)), (_, mut v)) in iter {
        if lm_frozen && LM_HEAD_TENSORS.contains(&name.as_str()) {
            continue;
        }
        let decay = if p.ndim() == 2 { cfg.weight_decay } else { 0.0 };
        ndarray::Zip::from(&mut p)
            .and(&g)
            .and(&mut m)
            .and(&mut v)
            .for_each(|p, &g, m, v| {
                let g = g * clip;
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
                *p -= lr * (update + decay * *p);
            });
    }
    Ok(())
}
