use crate::net::{ModelParams, Scalar};

use super::TrainError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Bias-corrected Adam on one flat buffer. `step` is the 1-based update
/// index; gradients are multiplied by `grad_scale` before use.
pub fn adam_step_slice<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    m: &mut [F],
    v: &mut [F],
    step: u64,
    lr: f64,
    grad_scale: f64,
) {
    let bc1 = 1.0 - BETA1.powi(step as i32);
    let bc2 = 1.0 - BETA2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i].f64() * grad_scale;
        let mi = BETA1 * m[i].f64() + (1.0 - BETA1) * g;
        let vi = BETA2 * v[i].f64() + (1.0 - BETA2) * g * g;
        m[i] = F::of(mi);
        v[i] = F::of(vi);
        let mhat = mi / bc1;
        let vhat = vi / bc2;
        params[i] = F::of(params[i].f64() - lr * mhat / (vhat.sqrt() + ADAM_EPS));
    }
}

/// L2 norm over every gradient entry, accumulated in `f64` in tensor order.
pub fn global_norm<F: Scalar>(grads: &ModelParams<F>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|g| {
            let g = g.f64();
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

/// Clips gradients to `clip_norm` (when positive) and applies one Adam update.
/// Non-finite gradients abort the step before any state changes.
pub fn adam_update<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut AdamState<F>,
    lr: f64,
    clip_norm: f64,
) -> Result<UpdateStats, TrainError> {
    for (name, t) in grads.tensors() {
        if let Some(i) = t.data.iter().position(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                tensor: name,
                index: i,
            });
        }
    }
    let norm = global_norm(grads);
    let (scale, clipped) = if clip_norm > 0.0 && norm > clip_norm {
        (clip_norm / norm, true)
    } else {
        (1.0, false)
    };
    state.step += 1;
    let step = state.step;
    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        adam_step_slice(&mut p.1.data, &g.1.data, &mut m.1.data, &mut v.1.data, step, lr, scale);
    }
    Ok(UpdateStats {
        grad_norm: norm,
        clipped,
    })
}
