//! Adam with decoupled weight decay and the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `lr0 * (1 + cos(pi * t / T)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64, OptimError> {
    if total_steps == 0 || step > total_steps {
        return Err(OptimError::InvalidParams(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    if !lr0.is_finite() || lr0 < 0.0 {
        return Err(OptimError::InvalidParams(format!("learning rate {lr0}")));
    }
    let t = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments shaped like the parameters, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Result<Self, OptimError> {
        let AdamConfig { beta1, beta2, eps } = config;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
            return Err(OptimError::InvalidParams(format!(
                "betas ({beta1}, {beta2}) must lie in [0, 1) and eps {eps} must be positive"
            )));
        }
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: bias-corrected Adam direction plus `lr * wd * param`
    /// taken directly from the parameter.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64, wd: f64) -> Result<(), OptimError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(OptimError::InvalidParams(format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.expect_same_shape(g, "adamw")?;
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let c1 = T::one() - T::lit(beta1.powi(self.step as i32));
        let c2 = T::one() - T::lit(beta2.powi(self.step as i32));
        let (lr, wd, eps) = (T::lit(lr), T::lit(wd), T::lit(eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((pv, &gv), (mv, vv)) in iter {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * *pv;
            }
        }
        Ok(())
    }
}
