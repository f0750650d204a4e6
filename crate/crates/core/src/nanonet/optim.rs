use crate::error::{Error, Result};

use super::config::NetConfig;
use super::model::{ParamGroup, ParamMut};
use super::tensor::Tensor;

/// Learning rate at `step` (0..=iterations): linear warmup from 0 over
/// `warmup_frac * iterations` steps, then cosine decay to `min_lr_ratio * lr_peak`.
pub fn cosine_lr(step: usize, config: &NetConfig) -> f64 {
    let peak = config.lr_peak;
    let total = config.iterations as f64;
    let warmup = config.warmup_frac * total;
    let s = step as f64;
    if s < warmup {
        return peak * s / warmup;
    }
    let span = total - warmup;
    let progress = if span > 0.0 { ((s - warmup) / span).min(1.0) } else { 1.0 };
    let r = config.min_lr_ratio;
    peak * (r + (1.0 - r) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn from_config(c: &NetConfig) -> Self {
        AdamHyper {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[ParamMut<'_>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
        }
    }
}

/// One AdamW update with bias correction. Decay (`p -= lr * wd * p`) is applied
/// to [`ParamGroup::Decay`] tensors before the Adam step; frozen range
/// parameters are left untouched.
pub fn adamw_step(params: &mut [ParamMut<'_>], grads: &[&Tensor], state: &mut AdamState, lr: f64, hp: &AdamHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.tensor.len() != g.len() || p.tensor.len() != state.m[i].len() {
            return Err(Error::Dimension(format!(
                "parameter {i}: {} values, gradient {}, state {}",
                p.tensor.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if !p.group.trainable() {
            continue;
        }
        let decay = p.group == ParamGroup::Decay && hp.weight_decay != 0.0;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            if decay {
                *w -= lr * hp.weight_decay * *w;
            }
            let gj = g.data()[j];
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * gj;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= lr * mhat / (vhat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// Scales every tensor by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`. A `max_norm` of 0 disables clipping. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
