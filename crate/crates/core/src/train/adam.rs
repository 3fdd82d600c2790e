use crate::ndnum::{Real, Tensor};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot<T: Real> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real> {
    pub slots: Vec<AdamSlot<T>>,
    /// Steps taken so far.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        AdamState {
            slots: params
                .into_iter()
                .map(|p| AdamSlot {
                    m: Tensor::zeros(p.shape()),
                    v: Tensor::zeros(p.shape()),
                })
                .collect(),
            t: 0,
        }
    }
}

/// Bias-corrected Adam update of every tensor. Gradients are checked for
/// finiteness before anything is modified.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    let mut slots: Vec<&mut AdamSlot<T>> = state.slots.iter_mut().collect();
    state.t = adam_step_slots(params, grads, names, &mut slots, state.t, cfg)?;
    Ok(())
}

/// As [`adam_step`], with the moments passed per tensor. Returns the new
/// step count.
pub fn adam_step_slots<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    names: &[String],
    slots: &mut [&mut AdamSlot<T>],
    t: u64,
    cfg: &AdamConfig,
) -> Result<u64, TrainError> {
    if params.len() != grads.len() || params.len() != slots.len() || params.len() != names.len() {
        return Err(TrainError::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots, {} names",
            params.len(),
            grads.len(),
            slots.len(),
            names.len()
        )));
    }
    for (((p, g), s), name) in params.iter().zip(grads).zip(slots.iter()).zip(names) {
        if p.shape() != g.shape() || p.shape() != s.m.shape() {
            return Err(TrainError::Shape(format!(
                "`{name}`: parameter {:?}, gradient {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                s.m.shape()
            )));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                tensor: name.clone(),
                index: i,
                value: g.data()[i].as_f64(),
            });
        }
    }
    let t = t + 1;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let bc1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let bc2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for ((p, g), s) in params.iter_mut().zip(grads).zip(slots.iter_mut()) {
        let (m, v) = (s.m.data_mut(), s.v.data_mut());
        for (i, (th, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = b1 * m[i] + c1 * gi;
            v[i] = b2 * v[i] + c2 * gi * gi;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            *th -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(t)
}
