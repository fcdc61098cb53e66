//! Adaptive-moment first-order optimizer.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the first
/// step so that a fresh optimizer can be attached to any parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<S>>,
    pub second: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Rebuilds an optimizer from saved moment buffers.
    pub fn from_state(config: AdamConfig, step: u64, first: Vec<Tensor<S>>, second: Vec<Tensor<S>>) -> Self {
        Self {
            config,
            step,
            first,
            second,
        }
    }

    pub fn update(&mut self, params: &mut [&mut Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TensorError::Invalid {
                op: "adam",
                msg: format!("{} parameters but {} gradients", params.len(), grads.len()),
            });
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(TensorError::Invalid {
                op: "adam",
                msg: format!("state tracks {} tensors, got {}", self.first.len(), params.len()),
            });
        }
        self.step += 1;
        let c = &self.config;
        let b1 = S::lit(c.beta1);
        let b2 = S::lit(c.beta2);
        let one = S::one();
        let t = self.step as i32;
        let lr_t = S::lit(c.lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let eps = S::lit(c.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (one - b1) * gi;
                vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
                pd[i] -= lr_t * md[i] / (vd[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Tensor::<f64>::from_vec(&[2], vec![3.0, -2.0]).unwrap();
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        for _ in 0..500 {
            let g = p.map(|x| 2.0 * x);
            adam.update(&mut [&mut p], &[g]).unwrap();
        }
        assert!(p.data().iter().all(|x| x.abs() < 1e-2), "{:?}", p.data());
        assert_eq!(adam.step, 500);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update has magnitude ~lr.
        let mut p = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut [&mut p], &[Tensor::from_vec(&[1], vec![0.5]).unwrap()])
            .unwrap();
        assert!((p.data()[0] - (1.0 - 1e-4)).abs() < 1e-9);
    }

    #[test]
    fn rejects_count_mismatch() {
        let mut p = Tensor::<f32>::zeros(&[1]);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.update(&mut [&mut p], &[]).is_err());
    }
}
