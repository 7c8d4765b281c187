//! Two-dimensional discrete Fourier transforms for arbitrary sizes.
//!
//! Power-of-two lengths use an iterative radix-2 kernel; every other length
//! goes through Bluestein's chirp-z reformulation on a padded power-of-two
//! grid. The forward transform is unnormalized and the inverse carries the
//! `1/(H·W)` factor.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math;

/// A reusable 1-D transform of fixed length.
#[derive(Clone, Debug)]
pub struct Fft1d {
    len: usize,
    kind: Kind,
}

#[derive(Clone, Debug)]
enum Kind {
    Trivial,
    Radix2 { twiddles: Vec<Complex64>, bitrev: Vec<usize> },
    Bluestein { chirp: Vec<Complex64>, kernel_hat: Vec<Complex64>, inner: Box<Fft1d> },
}

fn radix2_tables(n: usize) -> (Vec<Complex64>, Vec<usize>) {
    let bits = n.trailing_zeros();
    let twiddles = (0..n / 2)
        .map(|k| {
            let a = -2.0 * PI * k as f64 / n as f64;
            Complex64::new(math::cos(a), math::sin(a))
        })
        .collect();
    let bitrev = (0..n)
        .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
        .collect();
    (twiddles, bitrev)
}

impl Fft1d {
    pub fn new(len: usize) -> Self {
        let kind = if len <= 1 {
            Kind::Trivial
        } else if len.is_power_of_two() {
            let (twiddles, bitrev) = radix2_tables(len);
            Kind::Radix2 { twiddles, bitrev }
        } else {
            let m = (2 * len - 1).next_power_of_two();
            // chirp[k] = exp(-iπk²/n); k² reduced mod 2n keeps the angle small.
            let chirp: Vec<Complex64> = (0..len)
                .map(|k| {
                    let k2 = (k as u128 * k as u128 % (2 * len as u128)) as f64;
                    let a = -PI * k2 / len as f64;
                    Complex64::new(math::cos(a), math::sin(a))
                })
                .collect();
            let mut kernel = vec![Complex64::new(0.0, 0.0); m];
            kernel[0] = chirp[0].conj();
            for k in 1..len {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            let inner = Fft1d::new(m);
            inner.forward(&mut kernel);
            Kind::Bluestein { chirp, kernel_hat: kernel, inner: Box::new(inner) }
        };
        Fft1d { len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward transform, `X_k = Σ x_n e^{-2πikn/N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        match &self.kind {
            Kind::Trivial => {}
            Kind::Radix2 { twiddles, bitrev } => radix2(buf, twiddles, bitrev),
            Kind::Bluestein { chirp, kernel_hat, inner } => {
                let m = kernel_hat.len();
                let mut a = vec![Complex64::new(0.0, 0.0); m];
                for k in 0..self.len {
                    a[k] = buf[k] * chirp[k];
                }
                inner.forward(&mut a);
                for (v, k) in a.iter_mut().zip(kernel_hat) {
                    *v *= k;
                }
                inner.inverse_unscaled(&mut a);
                let scale = 1.0 / m as f64;
                for k in 0..self.len {
                    buf[k] = a[k] * chirp[k] * scale;
                }
            }
        }
    }

    /// In-place inverse transform without the `1/N` factor.
    pub fn inverse_unscaled(&self, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|v| *v = v.conj());
        self.forward(buf);
        buf.iter_mut().for_each(|v| *v = v.conj());
    }
}

/// Radix-2 transform down the columns of a row-major `bitrev.len()×w`
/// plane, one whole row per butterfly operand.
fn radix2_rows(plane: &mut [Complex64], w: usize, twiddles: &[Complex64], bitrev: &[usize], conj: bool) {
    let n = bitrev.len();
    for (i, &j) in bitrev.iter().enumerate() {
        if j > i {
            let (lo, hi) = plane.split_at_mut(j * w);
            lo[i * w..(i + 1) * w].swap_with_slice(&mut hi[..w]);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = twiddles[k * step];
                let t = if conj { t.conj() } else { t };
                let (lo, hi) = plane.split_at_mut((start + k + half) * w);
                let top = &mut lo[(start + k) * w..(start + k + 1) * w];
                let bot = &mut hi[..w];
                for (u, v) in top.iter_mut().zip(bot.iter_mut()) {
                    let tv = t * *v;
                    *v = *u - tv;
                    *u += tv;
                }
            }
        }
        size *= 2;
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64], bitrev: &[usize]) {
    let n = buf.len();
    for (i, &j) in bitrev.iter().enumerate().take(n) {
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let t = twiddles[k * step] * buf[start + k + half];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        size *= 2;
    }
}

/// Plan for `H×W` transforms; rows and columns reuse their 1-D plans.
#[derive(Clone, Debug)]
pub struct Fft2 {
    h: usize,
    w: usize,
    rows: Fft1d,
    cols: Fft1d,
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        Fft2 { h, w, rows: Fft1d::new(w), cols: Fft1d::new(h) }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Unnormalized forward 2-D transform of a row-major plane, in place.
    pub fn forward(&self, plane: &mut [Complex64]) {
        self.apply(plane, false);
    }

    /// Inverse 2-D transform, scaled by `1/(H·W)`, in place.
    pub fn inverse(&self, plane: &mut [Complex64]) {
        self.apply(plane, true);
        let s = 1.0 / (self.h * self.w) as f64;
        plane.iter_mut().for_each(|v| *v *= s);
    }

    /// Inverse 2-D transform without the `1/(H·W)` factor.
    pub fn inverse_unscaled(&self, plane: &mut [Complex64]) {
        self.apply(plane, true);
    }

    fn apply(&self, plane: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.h, self.w);
        debug_assert_eq!(plane.len(), h * w);
        for row in plane.chunks_exact_mut(w) {
            if inverse {
                self.rows.inverse_unscaled(row);
            } else {
                self.rows.forward(row);
            }
        }
        if let Kind::Radix2 { twiddles, bitrev } = &self.cols.kind {
            radix2_rows(plane, w, twiddles, bitrev, inverse);
            return;
        }
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = plane[y * w + x];
            }
            if inverse {
                self.cols.inverse_unscaled(&mut col);
            } else {
                self.cols.forward(&mut col);
            }
            for y in 0..h {
                plane[y * w + x] = col[y];
            }
        }
    }

    /// Spectra of two real planes from one complex transform.
    pub fn forward_real_pair(&self, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut z: Vec<Complex64> = a.iter().zip(b).map(|(&re, &im)| Complex64::new(re, im)).collect();
        self.forward(&mut z);
        let neg_half_i = Complex64::new(0.0, -0.5);
        let n = self.h * self.w;
        let (mut za, mut zb) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..self.h {
            let my = ((self.h - y) % self.h) * self.w;
            for x in 0..self.w {
                let mx = if x == 0 { 0 } else { self.w - x };
                let (zk, zm) = (z[y * self.w + x], z[my + mx].conj());
                za.push((zk + zm) * 0.5);
                zb.push((zk - zm) * neg_half_i);
            }
        }
        (za, zb)
    }

    /// `Re(ifft2(a))` and `Re(ifft2(b))` from one complex transform, without
    /// the `1/(H·W)` factor.
    pub fn inverse_real_pair_unscaled(&self, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        // The real part of an inverse transform only sees the Hermitian part
        // of the spectrum; two Hermitian spectra share one transform.
        let (h, w) = (self.h, self.w);
        let mut z = vec![Complex64::new(0.0, 0.0); h * w];
        let i_unit = Complex64::new(0.0, 1.0);
        for y in 0..h {
            let my = ((h - y) % h) * w;
            for x in 0..w {
                let i = y * w + x;
                let m = my + if x == 0 { 0 } else { w - x };
                let ha = (a[i] + a[m].conj()) * 0.5;
                let hb = (b[i] + b[m].conj()) * 0.5;
                z[i] = ha + i_unit * hb;
            }
        }
        self.inverse_unscaled(&mut z);
        (z.iter().map(|v| v.re).collect(), z.iter().map(|v| v.im).collect())
    }

    /// Forward transform of a real plane.
    pub fn forward_real(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

/// Forward 2-D FFT of a real `h×w` plane. Rejects non-finite input.
pub fn fft2(plane: &[f64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    if plane.len() != h * w {
        return Err(Error::DataLength { expected: h * w, got: plane.len() });
    }
    if plane.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fft2 input"));
    }
    Ok(Fft2::new(h, w).forward_real(plane))
}

/// Inverse 2-D FFT keeping only the real part of the result.
pub fn ifft2_real(spectrum: &[Complex64], h: usize, w: usize) -> Result<Vec<f64>> {
    Ok(ifft2(spectrum, h, w)?.into_iter().map(|c| c.re).collect())
}

/// Full complex inverse 2-D FFT, scaled by `1/(H·W)`.
pub fn ifft2(spectrum: &[Complex64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    if spectrum.len() != h * w {
        return Err(Error::DataLength { expected: h * w, got: spectrum.len() });
    }
    if spectrum.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("ifft2 input"));
    }
    let mut buf = spectrum.to_vec();
    Fft2::new(h, w).inverse(&mut buf);
    Ok(buf)
}
