use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub tensor: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, tensor: Tensor<S>) -> Self {
        Self {
            name: name.into(),
            tensor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for every parameter of one model.
#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub config: AdamWConfig,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new<'p>(config: AdamWConfig, params: impl IntoIterator<Item = &'p Param<S>>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(|p| p.tensor.numel()).collect();
        Self {
            config,
            first: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
///
/// `grads[i]` belongs to `params[i]`; parameters whose tensor does not require
/// grad are skipped but still occupy a slot.
pub fn adamw_step<S: Scalar>(
    params: &mut [&mut Param<S>],
    grads: &[Vec<S>],
    state: &mut OptimizerState<S>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::shape(
            "adamw_step",
            format!(
                "{} params, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.first.len()
            ),
        ));
    }
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.tensor.requires_grad() {
            if g.len() != p.tensor.numel() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("gradient of {} values for `{}` {:?}", g.len(), p.name, p.tensor.shape()),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = S::from_f64_lossy(c.beta1);
    let b2 = S::from_f64_lossy(c.beta2);
    let one = S::one();
    let bc1 = S::from_f64_lossy(1.0 - c.beta1.powi(t));
    let bc2 = S::from_f64_lossy(1.0 - c.beta2.powi(t));
    let eps = S::from_f64_lossy(c.eps);
    let lr_s = S::from_f64_lossy(lr);
    let decay = S::from_f64_lossy(1.0 - lr * c.weight_decay);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        if !p.tensor.requires_grad() {
            continue;
        }
        for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *w *= decay;
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr_s * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine annealing from `lr0` at epoch 0 down to `lr_min` at `total_epochs`.
pub fn cosine_anneal(lr0: f64, epoch: usize, total_epochs: usize, lr_min: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::invalid("cosine schedule needs at least one epoch"));
    }
    if epoch > total_epochs {
        return Err(Error::invalid(format!("epoch {epoch} beyond schedule of {total_epochs}")));
    }
    if lr0 < lr_min {
        return Err(Error::invalid(format!("initial lr {lr0} below floor {lr_min}")));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(vals: Vec<f64>) -> Param<f64> {
        Param::new("w", Tensor::vector(vals).unwrap().requiring_grad())
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut p = param(vec![1.5, -2.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, [&p]);
        adamw_step(&mut [&mut p], &[vec![0.0, 0.0]], &mut st, 0.1).unwrap();
        assert_eq!(p.tensor.data(), &[1.5, -2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_unit_gradient_step_moves_by_lr() {
        let mut p = param(vec![1.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(cfg, [&p]);
        adamw_step(&mut [&mut p], &[vec![1.0]], &mut st, 0.01).unwrap();
        // m̂ = v̂ = 1 on the first step
        let expected = 1.0 - 0.01 / (1.0 + 1e-8);
        assert!((p.tensor.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_only_step_shrinks_multiplicatively() {
        let mut p = param(vec![2.0]);
        let mut st = OptimizerState::new(AdamWConfig::default(), [&p]);
        adamw_step(&mut [&mut p], &[vec![0.0]], &mut st, 0.1).unwrap();
        assert!((p.tensor.data()[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = param(vec![1.0]);
        let mut st = OptimizerState::new(AdamWConfig::default(), [&p]);
        let err = adamw_step(&mut [&mut p], &[vec![f64::NAN]], &mut st, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_anneal(0.1, 0, 20, 1e-7).unwrap(), 0.1);
        assert_eq!(cosine_anneal(0.1, 20, 20, 1e-7).unwrap(), 1e-7);
        let mid = cosine_anneal(0.1, 10, 20, 1e-7).unwrap();
        assert!((mid - (0.1 + 1e-7) / 2.0).abs() < 1e-15);
        assert!(cosine_anneal(0.1, 0, 0, 1e-7).is_err());
    }
}
