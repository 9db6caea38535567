//! Adam optimizer with bias correction.

use super::{sc, Scalar};
use crate::error::{Error, Result};

/// Optimizer constants. Defaults follow the common (0.9, 0.999, 1e-8).
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    /// Zero-initialized state for parameter tensors of the given sizes.
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step: 0,
        }
    }
}

/// One Adam update over a set of named parameter tensors.
///
/// Moments are kept in f64 so the update is insensitive to the training
/// precision. Errors out on any non-finite gradient, naming the
/// offending parameter.
pub fn adam_step<S: Scalar>(
    names: &[String],
    params: &mut [&mut [S]],
    grads: &[&[S]],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    assert_eq!(params.len(), names.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (pi, (values, grad)) in params.iter_mut().zip(grads).enumerate() {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGrad {
                name: names[pi].clone(),
            });
        }
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for (i, val) in values.iter_mut().enumerate() {
            let g = grad[i].to_f64().expect("finite");
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let delta = hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
            *val = *val - sc::<S>(delta);
        }
    }
    Ok(())
}
