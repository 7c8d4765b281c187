//! Adam and the step-decay learning-rate schedule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// `lr0 · factor^⌊epoch / every⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub lr0: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay { lr0: 1e-3, factor: 0.5, every: 20 }
    }
}

impl StepDecay {
    pub fn lr(&self, epoch: usize) -> f64 {
        let k = epoch.checked_div(self.every).unwrap_or(0);
        self.lr0 * math::powi(self.factor, k as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over a fixed subset of a parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Parameter indices this optimizer owns.
    pub indices: Vec<usize>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, indices: Vec<usize>, params: &[&Tensor]) -> Self {
        let m: Vec<Tensor> = indices.iter().map(|&i| Tensor::zeros(params[i].shape())).collect();
        let v = m.clone();
        Adam { config, indices, m, v, t: 0 }
    }

    /// One bias-corrected Adam update of the owned parameters.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - math::powi(beta1, self.t as i32);
        let bc2 = 1.0 - math::powi(beta2, self.t as i32);
        for (slot, &i) in self.indices.iter().enumerate() {
            let g = &grads[i];
            let p = &mut *params[i];
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch { expected: p.shape(), got: g.shape() });
            }
            let (m, v) = (self.m[slot].data_mut(), self.v[slot].data_mut());
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                *pv -= lr * (*mv / bc1) / (math::sqrt(*vv / bc2) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::vec;

    #[test]
    fn schedule_halves_every_twenty_epochs() {
        let s = StepDecay::default();
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(19), 1e-3);
        assert_eq!(s.lr(20), 5e-4);
        assert_eq!(s.lr(40), 2.5e-4);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.3, -4.0, 0.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), vec![0], &[&p]);
        opt.step(&mut [&mut p], &[g], 0.01).unwrap();
        let d = p.data();
        assert!((d[0] - (1.0 - 0.01 * 0.3 / (0.3 + 1e-8))).abs() < 1e-15);
        assert!((d[1] - (-2.0 + 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn only_owned_parameters_move() {
        let mut a = Tensor::full(Shape::new(1, 1, 1, 2), 1.0);
        let mut b = Tensor::full(Shape::new(1, 1, 1, 2), 1.0);
        let g = Tensor::full(Shape::new(1, 1, 1, 2), 1.0);
        let mut opt = Adam::new(AdamConfig::default(), vec![1], &[&a, &b]);
        opt.step(&mut [&mut a, &mut b], &[g.clone(), g], 0.1).unwrap();
        assert_eq!(a.data(), &[1.0, 1.0]);
        assert!(b.data().iter().all(|&v| v < 1.0));
    }
}
