use crate::error::{Error, Result};

use super::{ParamSet, Scalar, Tensor};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        AdamState {
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update driven by the gradient slots of `params`.
///
/// Parameters without a gradient are treated as having a zero gradient.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.first.len() != params.len() || state.second.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            &[params.len()],
            &[state.first.len(), state.second.len()],
        ));
    }
    for (i, p) in params.tensors_mut().iter().enumerate() {
        if state.first[i].shape() != p.shape() || state.second[i].shape() != p.shape() {
            return Err(Error::shape("adam_step", p.shape(), state.first[i].shape()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);

    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let grad = p.grad().map(<[T]>::to_vec);
        let m = state.first[i].values_mut();
        let v = state.second[i].values_mut();
        let values = p.values_mut();
        for j in 0..values.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[j].as_f64());
            let mj = cfg.beta1 * m[j].as_f64() + (1.0 - cfg.beta1) * g;
            let vj = cfg.beta2 * v[j].as_f64() + (1.0 - cfg.beta2) * g * g;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let update = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            values[j] = T::from_f64(values[j].as_f64() - update);
        }
    }
    Ok(())
}
