use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::model::ParameterStore;
use crate::tensor::{Scalar, Tensor};

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(format!(
                "adam betas must be in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            ));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err("adam epsilon must be > 0 and weight_decay >= 0".into());
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParameterStore<T>) -> Self {
        let zeros: BTreeMap<String, Tensor<T>> = params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// `ceil(ratio * total)`, computed so that e.g. `0.1 * 100` gives 10.
pub fn warmup_steps(total: usize, ratio: f64) -> usize {
    let raw = ratio * total as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-9 * raw.abs().max(1.0) {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Linear warmup to `peak` over the first `ceil(ratio * total)` steps, then
/// linear decay to zero at `total`.
pub fn lr_at(step: usize, total: usize, ratio: f64, peak: f64) -> Result<f64> {
    if total == 0 || step > total {
        return Err(TrainError::StepRange { step, total });
    }
    let w = warmup_steps(total, ratio);
    if w >= total {
        return Err(TrainError::NoDecay { total, warmup: w });
    }
    Ok(if step < w {
        peak * (step as f64 / w as f64)
    } else {
        peak * ((total - step) as f64 / (total - w) as f64)
    })
}

/// One Adam update with bias correction. Weight decay, when non-zero, is
/// applied decoupled from the moments.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimizerState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if lr.is_nan() || lr < 0.0 {
        return Err(TrainError::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    if grads.len() != params.iter().count() {
        return Err(TrainError::StateMismatch(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.iter().count()
        )));
    }
    for (name, p) in params.iter() {
        let shape = p.shape();
        let same = |t: Option<&Tensor<T>>| t.is_some_and(|t| t.shape() == shape);
        if !same(grads.get(name)) || !same(state.m.get(name)) || !same(state.v.get(name)) {
            return Err(TrainError::StateMismatch(name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked").data_mut();
        let v = state.v.get_mut(name).expect("checked").data_mut();
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let gi = g[i].to_f64().unwrap_or(f64::NAN);
            let mi = b1 * m[i].to_f64().unwrap_or(f64::NAN) + (1.0 - b1) * gi;
            let vi = b2 * v[i].to_f64().unwrap_or(f64::NAN) + (1.0 - b2) * gi * gi;
            m[i] = T::from_f64_lossy(mi);
            v[i] = T::from_f64_lossy(vi);
            let wi = w.to_f64().unwrap_or(f64::NAN);
            let update = (mi / c1) / ((vi / c2).sqrt() + cfg.epsilon) + cfg.weight_decay * wi;
            *w = T::from_f64_lossy(wi - lr * update);
        }
    }
    Ok(())
}
