//! Fixed (non-learnable) depthwise filters with replicate borders.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along a row (x direction).
    Horizontal,
    /// Along a column (y direction).
    Vertical,
}

#[inline]
fn clamp(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Correlate every plane with `taps` (centered, odd length) along `axis`,
/// replicating edge pixels.
pub fn filter1d_replicate(x: &Tensor, taps: &[f64], axis: Axis) -> Tensor {
    let s = x.shape();
    let (h, w) = (s.h(), s.w());
    let r = (taps.len() / 2) as isize;
    let mut out = Tensor::zeros(s);
    for (src, dst) in x.data().chunks_exact(h * w).zip(out.data_mut().chunks_exact_mut(h * w)) {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (t, &k) in taps.iter().enumerate() {
                    let d = t as isize - r;
                    let (sy, sx) = match axis {
                        Axis::Horizontal => (y, clamp(xx as isize + d, w)),
                        Axis::Vertical => (clamp(y as isize + d, h), xx),
                    };
                    acc += k * src[sy * w + sx];
                }
                dst[y * w + xx] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`filter1d_replicate`].
fn filter1d_replicate_adjoint(g: &Tensor, taps: &[f64], axis: Axis) -> Tensor {
    let s = g.shape();
    let (h, w) = (s.h(), s.w());
    let r = (taps.len() / 2) as isize;
    let mut out = Tensor::zeros(s);
    for (src, dst) in g.data().chunks_exact(h * w).zip(out.data_mut().chunks_exact_mut(h * w)) {
        for y in 0..h {
            for xx in 0..w {
                let gv = src[y * w + xx];
                for (t, &k) in taps.iter().enumerate() {
                    let d = t as isize - r;
                    let (sy, sx) = match axis {
                        Axis::Horizontal => (y, clamp(xx as isize + d, w)),
                        Axis::Vertical => (clamp(y as isize + d, h), xx),
                    };
                    dst[sy * w + sx] += k * gv;
                }
            }
        }
    }
    out
}

impl Graph {
    /// Differentiable [`filter1d_replicate`].
    pub fn filter1d(&mut self, x: Var, taps: &[f64], axis: Axis) -> Var {
        let out = filter1d_replicate(self.value(x), taps, axis);
        let taps: Vec<f64> = taps.to_vec();
        self.push(out, &[x], Box::new(move |g, _, _| vec![Some(filter1d_replicate_adjoint(g, &taps, axis))]))
    }

    /// Separable 2-D filter: `row_taps` along x, then `col_taps` along y.
    pub fn filter_separable(&mut self, x: Var, row_taps: &[f64], col_taps: &[f64]) -> Var {
        let t = self.filter1d(x, row_taps, Axis::Horizontal);
        self.filter1d(t, col_taps, Axis::Vertical)
    }
}
