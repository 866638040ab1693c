use std::collections::BTreeMap;

use crate::error::{IrisError, Result};
use crate::params::{GradientSet, ParameterStore, Partition};

use super::regime::TrainRegime;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup to `peak_lr` at `warmup_steps`, then `peak * sqrt(warmup / step)`.
/// With `warmup_steps == 0` the rate is constant.
pub fn lr_schedule(step: u64, peak_lr: f64, warmup_steps: u64) -> f64 {
    let step = step.max(1);
    if warmup_steps == 0 {
        peak_lr
    } else if step < warmup_steps {
        peak_lr * step as f64 / warmup_steps as f64
    } else {
        peak_lr * (warmup_steps as f64 / step as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
    pub step: u64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
}

impl OptimizerState {
    pub fn new(peak_lr: f64, warmup_steps: u64) -> Self {
        Self {
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step: 0,
            peak_lr,
            warmup_steps,
        }
    }

    /// Rate the next call to [`adam_step`] will use.
    pub fn next_lr(&self) -> f64 {
        lr_schedule(self.step + 1, self.peak_lr, self.warmup_steps)
    }
}

/// One Adam update with bias correction. Only partitions in `regime.update`
/// move; a gradient for any other partition is a contract violation.
/// Updated values are rounded to `f32` storage precision.
pub fn adam_step(
    params: &mut ParameterStore,
    grads: &GradientSet,
    state: &mut OptimizerState,
    regime: &TrainRegime,
) -> Result<f64> {
    for (name, g) in grads.iter() {
        let p = Partition::of(name)?;
        if !regime.update.contains(&p) || params.is_frozen(p) {
            return Err(IrisError::FrozenPartition(p.to_string()));
        }
        let numel = params.get(name)?.numel();
        if g.len() != numel {
            return Err(IrisError::shape(
                "adam_step",
                format!("gradient of `{name}` has {} values, parameter has {numel}", g.len()),
            ));
        }
    }
    state.step += 1;
    let lr = lr_schedule(state.step, state.peak_lr, state.warmup_steps);
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, g) in grads.iter() {
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let w = params.get_mut(name)?.data_mut();
        for i in 0..g.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] = (w[i] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32 as f64;
        }
    }
    Ok(lr)
}
