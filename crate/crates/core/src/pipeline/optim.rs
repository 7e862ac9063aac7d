use super::OptimizerKind;
use crate::autodiff::{Checkpoint, ParamStore};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const ADAM_STEP_KEY: &str = "optim.adam.t";

/// `p ← p − lr·g`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], lr: f64) {
    for (p, &g) in params.iter_mut().zip(grads) {
        *p = (*p as f64 - lr * g as f64) as f32;
    }
}

/// One bias-corrected Adam update; `t` is the 1-based step count.
pub fn adam_step(params: &mut [f32], grads: &[f32], m: &mut [f32], v: &mut [f32], t: u64, lr: f64) {
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let mi = ADAM_BETA1 * m[i] as f64 + (1.0 - ADAM_BETA1) * g;
        let vi = ADAM_BETA2 * v[i] as f64 + (1.0 - ADAM_BETA2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
        params[i] = (params[i] as f64 - update) as f32;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam { m: Vec<Vec<f32>>, v: Vec<Vec<f32>>, t: u64 },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ParamStore<f32>) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam {
                m: params.zero_grads(),
                v: params.zero_grads(),
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Vec<f32>], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (t, g) in params.tensors_mut().iter_mut().zip(grads) {
                    sgd_step(t.data_mut(), g, lr);
                }
            }
            OptimizerState::Adam { m, v, t } => {
                *t += 1;
                for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
                    adam_step(p.data_mut(), g, &mut m[i], &mut v[i], *t, lr);
                }
            }
        }
    }

    /// Stores the moments next to the parameters, keyed by parameter name.
    pub fn save(&self, params: &ParamStore<f32>, ckpt: &mut Checkpoint) {
        if let OptimizerState::Adam { m, v, t } = self {
            ckpt.insert(ADAM_STEP_KEY, vec![1], vec![*t as f32]);
            for (i, (name, p)) in params.iter().enumerate() {
                ckpt.insert(format!("optim.adam.m.{name}"), p.dims().to_vec(), m[i].clone());
                ckpt.insert(format!("optim.adam.v.{name}"), p.dims().to_vec(), v[i].clone());
            }
        }
    }

    /// Restores state written by [`OptimizerState::save`]; a checkpoint without
    /// moments restarts Adam from zero.
    pub fn load(kind: OptimizerKind, params: &ParamStore<f32>, ckpt: &Checkpoint) -> Result<Self> {
        let mut state = Self::new(kind, params);
        if let (OptimizerState::Adam { m, v, t }, Some(step)) = (&mut state, ckpt.get(ADAM_STEP_KEY)) {
            *t = step.data.first().copied().unwrap_or(0.0) as u64;
            for (i, (name, p)) in params.iter().enumerate() {
                for (slot, prefix) in [(&mut m[i], "m"), (&mut v[i], "v")] {
                    let key = format!("optim.adam.{prefix}.{name}");
                    let entry = ckpt
                        .get(&key)
                        .ok_or_else(|| Error::Malformed(format!("checkpoint lacks `{key}`")))?;
                    if entry.data.len() != p.len() {
                        return Err(Error::shape("optimizer", format!("`{key}` has {} values", entry.data.len())));
                    }
                    slot.copy_from_slice(&entry.data);
                }
            }
        }
        Ok(state)
    }
}
