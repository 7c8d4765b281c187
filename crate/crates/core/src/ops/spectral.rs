//! Differentiable Fourier-domain operations.
//!
//! Complex tensors are stored with real parts in channels `[0, C)` and
//! imaginary parts in channels `[C, 2C)`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::map_indices;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::math;
use crate::tensor::{Shape, Tensor};

fn split(t: &Tensor, n: usize, c: usize, half: usize) -> Vec<Complex64> {
    t.plane(n, c).iter().zip(t.plane(n, c + half)).map(|(&re, &im)| Complex64::new(re, im)).collect()
}

fn write(t: &mut Tensor, n: usize, c: usize, half: usize, buf: &[Complex64]) {
    for (o, v) in t.plane_mut(n, c).iter_mut().zip(buf) {
        *o = v.re;
    }
    for (o, v) in t.plane_mut(n, c + half).iter_mut().zip(buf) {
        *o = v.im;
    }
}

type PlanePair = ((usize, usize), Option<(usize, usize)>);

/// Every `(sample, channel)` plane index, grouped in twos.
fn plane_pairs(n: usize, c: usize) -> Vec<PlanePair> {
    let all: Vec<(usize, usize)> = (0..n).flat_map(|ni| (0..c).map(move |ci| (ni, ci))).collect();
    all.chunks(2).map(|p| (p[0], p.get(1).copied())).collect()
}

/// Spectra of the real planes `(n, c)` of `x`, written as complex channels
/// of `out` (`half` channels apart), scaled by `k`.
fn real_forward_into(plan: &Fft2, x: &Tensor, out: &mut Tensor, half: usize, k: f64) {
    let pairs = plane_pairs(x.shape().n(), x.shape().c());
    let zeros = vec![0.0; x.shape().plane()];
    let spectra = map_indices(pairs.len(), |i| {
        let (a, b) = pairs[i];
        let pb = b.map_or(&zeros[..], |(n, c)| x.plane(n, c));
        let (mut za, mut zb) = plan.forward_real_pair(x.plane(a.0, a.1), pb);
        if k != 1.0 {
            za.iter_mut().chain(zb.iter_mut()).for_each(|v| *v *= k);
        }
        (za, zb)
    });
    for ((a, b), (za, zb)) in pairs.into_iter().zip(spectra) {
        write(out, a.0, a.1, half, &za);
        if let Some((n, c)) = b {
            write(out, n, c, half, &zb);
        }
    }
}

/// `k · Re(unscaled ifft2)` of the complex channels of `z` into the real
/// tensor `out`.
fn real_inverse_into(plan: &Fft2, z: &Tensor, out: &mut Tensor, k: f64) {
    let half = out.shape().c();
    let pairs = plane_pairs(out.shape().n(), half);
    let zeros = vec![Complex64::new(0.0, 0.0); out.shape().plane()];
    let planes = map_indices(pairs.len(), |i| {
        let (a, b) = pairs[i];
        let sa = split(z, a.0, a.1, half);
        let sb = b.map_or_else(|| zeros.clone(), |(n, c)| split(z, n, c, half));
        plan.inverse_real_pair_unscaled(&sa, &sb)
    });
    for ((a, b), (ra, rb)) in pairs.into_iter().zip(planes) {
        for (o, v) in out.plane_mut(a.0, a.1).iter_mut().zip(&ra) {
            *o = k * v;
        }
        if let Some((n, c)) = b {
            for (o, v) in out.plane_mut(n, c).iter_mut().zip(&rb) {
                *o = k * v;
            }
        }
    }
}

impl Graph {
    /// Unnormalized 2-D FFT of every channel: `N×C×H×W → N×2C×H×W`.
    pub fn fft2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if !self.value(x).all_finite() {
            return Err(Error::NonFinite("fft2 input"));
        }
        let (c, h, w) = (s.c(), s.h(), s.w());
        let plan = Fft2::new(h, w);
        let mut out = Tensor::zeros(s.with_c(2 * c));
        real_forward_into(&plan, self.value(x), &mut out, c, 1.0);
        Ok(self.push(
            out,
            &[x],
            Box::new(move |g, _, _| {
                // Adjoint of a real-input DFT: Re(unscaled inverse DFT of G).
                let mut gx = Tensor::zeros(s);
                real_inverse_into(&plan, g, &mut gx, 1.0);
                vec![Some(gx)]
            }),
        ))
    }

    /// Inverse 2-D FFT scaled by `1/(H·W)`, keeping the real part:
    /// `N×2C×H×W → N×C×H×W`.
    pub fn ifft2_real(&mut self, z: Var) -> Result<Var> {
        let s = self.shape(z);
        if !s.c().is_multiple_of(2) {
            return Err(Error::ShapeMismatch { expected: s.with_c(s.c() + 1), got: s });
        }
        if !self.value(z).all_finite() {
            return Err(Error::NonFinite("ifft2 input"));
        }
        let (c, h, w) = (s.c() / 2, s.h(), s.w());
        let plan = Fft2::new(h, w);
        let mut out = Tensor::zeros(s.with_c(c));
        let scale = 1.0 / (h * w) as f64;
        real_inverse_into(&plan, self.value(z), &mut out, scale);
        Ok(self.push(
            out,
            &[z],
            Box::new(move |g, _, _| {
                let mut gz = Tensor::zeros(s);
                real_forward_into(&plan, g, &mut gz, c, scale);
                vec![Some(gz)]
            }),
        ))
    }

    /// Complex modulus `√(re² + im²)`: `N×2C → N×C`. Zero-modulus bins get
    /// zero gradient.
    pub fn complex_abs(&mut self, z: Var) -> Result<Var> {
        let s = self.shape(z);
        if !s.c().is_multiple_of(2) {
            return Err(Error::ShapeMismatch { expected: s.with_c(s.c() + 1), got: s });
        }
        let c = s.c() / 2;
        let zv = self.value(z);
        let mut out = Tensor::zeros(s.with_c(c));
        for ni in 0..s.n() {
            for ci in 0..c {
                let (re, im) = (zv.plane(ni, ci).to_vec(), zv.plane(ni, ci + c));
                for ((o, a), b) in out.plane_mut(ni, ci).iter_mut().zip(&re).zip(im) {
                    *o = math::sqrt(a * a + b * b);
                }
            }
        }
        Ok(self.push(
            out,
            &[z],
            Box::new(move |g, pv, out| {
                let zv = pv[0];
                let mut gz = Tensor::zeros(s);
                for ni in 0..s.n() {
                    for ci in 0..c {
                        for i in 0..s.plane() {
                            let m = out.plane(ni, ci)[i];
                            if m > 0.0 {
                                let gm = g.plane(ni, ci)[i] / m;
                                gz.plane_mut(ni, ci)[i] = gm * zv.plane(ni, ci)[i];
                                gz.plane_mut(ni, ci + c)[i] = gm * zv.plane(ni, ci + c)[i];
                            }
                        }
                    }
                }
                vec![Some(gz)]
            }),
        ))
    }

    /// Multiply every complex channel of `z` (`N×2C×H×W`) by a fixed
    /// per-frequency complex mask of shape `1×2×H×W`.
    pub fn complex_mul_const(&mut self, z: Var, mask: &Tensor) -> Result<Var> {
        let s = self.shape(z);
        mask.expect_shape(Shape::new(1, 2, s.h(), s.w()))?;
        if !s.c().is_multiple_of(2) {
            return Err(Error::ShapeMismatch { expected: s.with_c(s.c() + 1), got: s });
        }
        let c = s.c() / 2;
        let (mr, mi) = (mask.plane(0, 0).to_vec(), mask.plane(0, 1).to_vec());
        let apply = move |src: &Tensor, conj: bool| {
            let mut out = Tensor::zeros(s);
            let sign = if conj { -1.0 } else { 1.0 };
            for ni in 0..s.n() {
                for ci in 0..c {
                    for i in 0..s.plane() {
                        let (re, im) = (src.plane(ni, ci)[i], src.plane(ni, ci + c)[i]);
                        let (a, b) = (mr[i], sign * mi[i]);
                        out.plane_mut(ni, ci)[i] = re * a - im * b;
                        out.plane_mut(ni, ci + c)[i] = re * b + im * a;
                    }
                }
            }
            out
        };
        let out = apply(self.value(z), false);
        Ok(self.push(out, &[z], Box::new(move |g, _, _| vec![Some(apply(g, true))])))
    }
}
