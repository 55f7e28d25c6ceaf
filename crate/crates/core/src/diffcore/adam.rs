use serde::{Deserialize, Serialize};

use super::Tensor2D;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor2D>,
    second: Vec<Tensor2D>,
    step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor2D>, config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", config.lr)));
        }
        let first: Vec<Tensor2D> = params
            .into_iter()
            .map(|p| Tensor2D::zeros(p.rows(), p.cols()))
            .collect();
        Ok(Self {
            config,
            second: first.clone(),
            first,
            step: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected ADAM update. A tensor whose gradient is zero
    /// everywhere keeps both its value and its moments.
    pub fn step(&mut self, params: &mut [&mut Tensor2D], grads: &[Tensor2D]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params / {} grads for {} accumulators",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != self.first[i].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "tensor {i}: param {:?}, grad {:?}, state {:?}",
                        p.shape(),
                        g.shape(),
                        self.first[i].shape()
                    ),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if g.as_slice().iter().all(|&d| d == 0.0) {
                continue;
            }
            let m = self.first[i].as_mut_slice();
            let v = self.second[i].as_mut_slice();
            for (k, (w, &d)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * d;
                v[k] = beta2 * v[k] + (1.0 - beta2) * d * d;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity_for_any_state() {
        let mut p = Tensor2D::from_vec(1, 2, vec![1.5, -0.5]).unwrap();
        let mut s = AdamState::new([&p], AdamConfig::with_lr(0.1)).unwrap();
        s.step(&mut [&mut p], &[Tensor2D::from_vec(1, 2, vec![1.0, -2.0]).unwrap()])
            .unwrap();
        let before = p.clone();
        s.step(&mut [&mut p], &[Tensor2D::zeros(1, 2)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.steps(), 2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor2D::scalar(1.0);
        let mut s = AdamState::new([&p], AdamConfig::with_lr(0.1)).unwrap();
        s.step(&mut [&mut p], &[Tensor2D::scalar(4.0)]).unwrap();
        assert!((p.item().unwrap() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn two_step_trace_matches_recurrence() {
        // Oracle: the textbook recurrence written out by hand.
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }

        let mut p = Tensor2D::scalar(0.5);
        let mut s = AdamState::new([&p], AdamConfig::with_lr(lr)).unwrap();
        for _ in 0..2 {
            s.step(&mut [&mut p], &[Tensor2D::scalar(1.0)]).unwrap();
        }
        assert!((p.item().unwrap() - w).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_shapes_and_bad_lr() {
        let mut p = Tensor2D::zeros(2, 2);
        let mut s = AdamState::new([&p], AdamConfig::default()).unwrap();
        assert!(s.step(&mut [&mut p], &[Tensor2D::zeros(1, 2)]).is_err());
        assert!(AdamState::new([&p], AdamConfig::with_lr(0.0)).is_err());
    }
}
