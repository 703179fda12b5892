//! RMSprop with decoupled weight decay, the warmup/cosine schedule, and the
//! early-stopping rule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::TrainConfig;

/// Running mean of squared gradients, per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RmsPropState {
    pub square_avg: BTreeMap<String, Vec<f64>>,
}

/// `s ← α·s + (1−α)·g²`, then `θ ← θ − lr·g/(√s + ε) − lr·wd·θ`.
pub fn rmsprop_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut RmsPropState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    let alpha = config.rmsprop_alpha;
    let eps = config.rmsprop_eps;
    let wd = config.weight_decay;
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NumericFault(format!("non-finite gradient for `{name}`")));
        }
        let theta = params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter `{name}`")))?;
        if theta.shape() != g.shape() {
            return Err(Error::shape("rmsprop_step", theta.shape(), g.shape()));
        }
        let s = state
            .square_avg
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.numel()]);
        if s.len() != g.numel() {
            return Err(Error::shape("rmsprop_step", &[s.len()], g.shape()));
        }
        for ((t, s), &g) in theta.data_mut().iter_mut().zip(s.iter_mut()).zip(g.data()) {
            *s = alpha * *s + (1.0 - alpha) * g * g;
            *t -= lr * g / (s.sqrt() + eps) + lr * wd * *t;
        }
    }
    Ok(())
}

/// Linear warmup from `lr_init` to `lr_peak` over `warmup_epochs`, then
/// cosine decay to `lr_final` at the last epoch.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside 0..{}", config.epochs)));
    }
    let warm = config.warmup_epochs;
    if epoch < warm {
        let t = epoch as f64 / warm as f64;
        return Ok(config.lr_init + t * (config.lr_peak - config.lr_init));
    }
    let span = config.epochs - 1 - warm;
    if span == 0 {
        return Ok(config.lr_peak);
    }
    let t = (epoch - warm) as f64 / span as f64;
    Ok(config.lr_final + 0.5 * (config.lr_peak - config.lr_final) * (1.0 + (PI * t).cos()))
}

/// True once the monitored value has gone `patience` consecutive epochs
/// without exceeding its best earlier value.
pub fn early_stop(history: &[f64], patience: usize) -> bool {
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    for &v in history {
        if v > best {
            best = v;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    stale >= patience
}
