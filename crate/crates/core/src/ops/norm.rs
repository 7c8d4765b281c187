use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::math;
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over `N·H·W`.
    pub var: Vec<f64>,
    pub count: usize,
}

impl Graph {
    /// Batch normalization using the statistics of `x` itself.
    ///
    /// `gamma` and `beta` have shape `1×C×1×1`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let s = self.shape(x);
        let (n, c, p) = (s.n(), s.c(), s.plane());
        self.value(gamma).expect_shape(Shape::new(1, c, 1, 1))?;
        self.value(beta).expect_shape(Shape::new(1, c, 1, 1))?;
        let count = n * p;
        let xv = self.value(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut acc = 0.0;
            for ni in 0..n {
                acc += xv.plane(ni, ci).iter().sum::<f64>();
            }
            let m = acc / count as f64;
            let mut v = 0.0;
            for ni in 0..n {
                v += xv.plane(ni, ci).iter().map(|&a| (a - m) * (a - m)).sum::<f64>();
            }
            mean[ci] = m;
            var[ci] = v / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + BN_EPS)).collect();
        let (gv, bv) = (self.value(gamma).data().to_vec(), self.value(beta).data().to_vec());
        let mut out = Tensor::zeros(s);
        for ni in 0..n {
            for ci in 0..c {
                let (m, is, g, b) = (mean[ci], inv_std[ci], gv[ci], bv[ci]);
                for (o, &a) in out.plane_mut(ni, ci).iter_mut().zip(xv.plane(ni, ci)) {
                    *o = g * (a - m) * is + b;
                }
            }
        }
        let stats = BatchStats { mean: mean.clone(), var, count };
        let var_node = self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |g, pv, _| {
                let (xv, gam) = (pv[0], pv[1].data());
                let mut gx = Tensor::zeros(s);
                let mut gg = Tensor::zeros(Shape::new(1, c, 1, 1));
                let mut gb = Tensor::zeros(Shape::new(1, c, 1, 1));
                for ci in 0..c {
                    let (m, is) = (mean[ci], inv_std[ci]);
                    let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                    for ni in 0..n {
                        for (&gy, &a) in g.plane(ni, ci).iter().zip(xv.plane(ni, ci)) {
                            sum_g += gy;
                            sum_gx += gy * (a - m) * is;
                        }
                    }
                    gg.data_mut()[ci] = sum_gx;
                    gb.data_mut()[ci] = sum_g;
                    let k = gam[ci] * is / count as f64;
                    for ni in 0..n {
                        let (gp, xp) = (g.plane(ni, ci), xv.plane(ni, ci));
                        for ((o, &gy), &a) in gx.plane_mut(ni, ci).iter_mut().zip(gp).zip(xp) {
                            let xhat = (a - m) * is;
                            *o = k * (count as f64 * gy - sum_g - xhat * sum_gx);
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        );
        Ok((var_node, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_fixed(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Result<Var> {
        let s = self.shape(x);
        let c = s.c();
        self.value(gamma).expect_shape(Shape::new(1, c, 1, 1))?;
        self.value(beta).expect_shape(Shape::new(1, c, 1, 1))?;
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / math::sqrt(v + BN_EPS)).collect();
        let m = self.constant(Tensor::from_vec(Shape::new(1, c, 1, 1), mean.to_vec())?);
        let is = self.constant(Tensor::from_vec(Shape::new(1, c, 1, 1), inv_std)?);
        let d = self.sub(x, m)?;
        let centered = self.mul(d, is)?;
        let scaled = self.mul(centered, gamma)?;
        self.add(scaled, beta)
    }
}
