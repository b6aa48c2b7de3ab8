use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

/// Hyperparameters only, for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    /// Zeroed moment buffers shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, cfg: AdamConfig) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let second = first.clone();
        Self { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, step: 0, first, second }
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pv, gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new([&p], AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_moves_at_learning_rate() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::new(&[2], vec![0.3, -7.0]).unwrap();
        let mut adam = Adam::new([&p], AdamConfig::default());
        let mut prev = p.clone();
        for _ in 0..500 {
            prev = p.clone();
            adam.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        }
        for (a, b) in p.data().iter().zip(prev.data()) {
            let step = (a - b).abs();
            assert!((step / 1e-4 - 1.0).abs() < 0.01, "{step}");
        }
        assert!(p.data()[0] < 0.0 && p.data()[1] > 0.0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Tensor::new(&[2], vec![0.1, 0.2]).unwrap();
            let mut adam = Adam::new([&p], AdamConfig { lr: 1e-2, ..Default::default() });
            for i in 0..20 {
                let g = Tensor::new(&[2], vec![(i as f64).sin(), 0.5]).unwrap();
                adam.step(&mut [&mut p], &[g]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut adam = Adam::new([&p], AdamConfig::default());
        assert!(adam.step(&mut [&mut p], &[]).is_err());
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
    }
}
