//! SGD with momentum, Adam, and the DP-SGD gradient privatizer.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer hyperparameters, without any per-parameter state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    SgdMomentum { lr: f64, momentum: f64 },
    Adam { lr: f64 },
    DpSgd {
        lr: f64,
        momentum: f64,
        clip_norm: f64,
        noise_std: f64,
    },
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        let (lr, momentum) = match *self {
            OptimizerSpec::SgdMomentum { lr, momentum } => (lr, momentum),
            OptimizerSpec::Adam { lr } => (lr, 0.0),
            OptimizerSpec::DpSgd {
                lr,
                momentum,
                clip_norm,
                noise_std,
            } => {
                if clip_norm.is_nan() || clip_norm <= 0.0 {
                    return Err(Error::config(format!("clip norm must be positive, got {clip_norm}")));
                }
                if !(noise_std >= 0.0 && noise_std.is_finite()) {
                    return Err(Error::config(format!(
                        "noise std must be non-negative, got {noise_std}"
                    )));
                }
                (lr, momentum)
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(())
    }

    pub fn is_private(&self) -> bool {
        matches!(self, OptimizerSpec::DpSgd { .. })
    }
}

/// Optimizer hyperparameters plus accumulators shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    spec: OptimizerSpec,
    first: ModelWeights,
    second: Option<ModelWeights>,
    step: u64,
}

impl OptimizerState {
    pub fn new(spec: OptimizerSpec, model: &ModelWeights) -> Result<Self> {
        spec.validate()?;
        let second = matches!(spec, OptimizerSpec::Adam { .. }).then(|| model.zeros_like());
        Ok(Self {
            spec,
            first: model.zeros_like(),
            second,
            step: 0,
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Momentum buffer (SGD variants) or first moment (Adam).
    pub fn first_moment(&self) -> &ModelWeights {
        &self.first
    }

    /// Applies one update from an already-computed gradient. For DP-SGD the
    /// gradient passed here must already be privatized.
    pub fn apply(&mut self, model: &mut ModelWeights, grads: &ModelWeights) -> Result<()> {
        model.ensure_same_shape(grads)?;
        model.ensure_same_shape(&self.first)?;
        match self.spec {
            OptimizerSpec::SgdMomentum { lr, momentum } | OptimizerSpec::DpSgd { lr, momentum, .. } => {
                sgd_momentum_step(model, &mut self.first, grads, lr, momentum)
            }
            OptimizerSpec::Adam { lr } => {
                let second = self.second.as_mut().expect("adam state has a second moment");
                adam_step(model, &mut self.first, second, grads, lr, self.step + 1)
            }
        }
        self.step += 1;
        if !model.all_finite() {
            return Err(Error::Invariant(format!(
                "non-finite parameter after optimizer step {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// `v <- momentum * v + g; w <- w - lr * v`.
pub fn sgd_momentum_step(
    model: &mut ModelWeights,
    velocity: &mut ModelWeights,
    grads: &ModelWeights,
    lr: f64,
    momentum: f64,
) {
    for ((w, v), g) in model.params_mut().zip(velocity.params_mut()).zip(grads.params()) {
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}

/// Bias-corrected Adam update; `t` is the 1-based step number.
pub fn adam_step(
    model: &mut ModelWeights,
    m: &mut ModelWeights,
    v: &mut ModelWeights,
    grads: &ModelWeights,
    lr: f64,
    t: u64,
) {
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for (((w, m), v), g) in model
        .params_mut()
        .zip(m.params_mut())
        .zip(v.params_mut())
        .zip(grads.params())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Clips each example's gradient to L2 norm at most `clip_norm`, averages
/// them, then adds `N(0, noise_std^2)` noise to every coordinate of the mean.
pub fn dp_clip_and_noise(
    per_example: &[ModelWeights],
    clip_norm: f64,
    noise_std: f64,
    rng: &mut StreamRng,
) -> Result<ModelWeights> {
    if clip_norm.is_nan() || clip_norm <= 0.0 {
        return Err(Error::config(format!("clip norm must be positive, got {clip_norm}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::config(format!("noise std must be non-negative, got {noise_std}")));
    }
    let first = per_example
        .first()
        .ok_or_else(|| Error::shape("DP step needs at least one per-example gradient"))?;
    let mut sum = first.zeros_like();
    for g in per_example {
        sum.ensure_same_shape(g)?;
        let norm = g.l2_norm();
        if norm > clip_norm {
            let mut clipped = g.clone();
            clipped.scale(clip_norm / norm);
            sum.add_assign(&clipped);
        } else {
            sum.add_assign(g);
        }
    }
    sum.scale(1.0 / per_example.len() as f64);
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::config(e.to_string()))?;
        for p in sum.params_mut() {
            *p += normal.sample(rng);
        }
    }
    Ok(sum)
}
