//! Stride-1, size-preserving 2-D convolution (optionally dilated).

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{for_each_chunk_mut, map_indices};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `c[m×n] = alpha·a[m×k]·b[k×n] + beta·c` on row-major slices, with an
/// optional transpose of either operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the row-major (or transposed) layout of
    // slices whose lengths were checked above; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// A row-major-or-strided matrix operand: `(data, row_stride, col_stride)`.
type Operand<'a> = (&'a [f64], usize, usize);

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c[m×n] = a[m×k]·b[k×n] + beta·c` with explicit element strides.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, beta: f64, c: &mut [f64], rsc: usize, csc: usize) {
    assert!(a.0.len() >= extent(m, k, a.1, a.2));
    assert!(b.0.len() >= extent(k, n, b.1, b.2));
    assert!(c.len() >= extent(m, n, rsc, csc));
    // SAFETY: the asserts above bound every element the strides can reach,
    // and `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Output columns handled per gemm call; keeps the unfolded block in cache.
const CHUNK_COLS: usize = 256;

/// Geometry of one convolution.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    dilation: usize,
    pad: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Image rows per chunk.
    fn band(&self) -> usize {
        (CHUNK_COLS / self.w).max(1)
    }

    /// Valid output range `[lo, hi)` along one axis for kernel tap `t`.
    fn span(&self, t: usize, len: usize) -> (usize, usize, isize) {
        let off = (t * self.dilation) as isize - self.pad as isize;
        let lo = if off < 0 { (-off) as usize } else { 0 }.min(len);
        let hi = if off > 0 { len.saturating_sub(off as usize) } else { len }.max(lo);
        (lo, hi, off)
    }

    /// Unfold output rows `[y0, y1)` of one sample into a
    /// `(Cin·k·k) × ((y1−y0)·W)` matrix with zero padding.
    fn im2col(&self, x: &[f64], col: &mut [f64], y0: usize, y1: usize) {
        let (h, w, k) = (self.h, self.w, self.k);
        let p = h * w;
        let cw = (y1 - y0) * w;
        for ci in 0..self.cin {
            let src = &x[ci * p..(ci + 1) * p];
            for ky in 0..k {
                let (ylo, yhi, yoff) = self.span(ky, h);
                let (ylo, yhi) = (ylo.max(y0), yhi.min(y1).max(ylo.max(y0)));
                for kx in 0..k {
                    let (xlo, xhi, xoff) = self.span(kx, w);
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * cw..(row + 1) * cw];
                    if ylo > y0 || yhi < y1 || xlo > 0 || xhi < w {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                    }
                    for y in ylo..yhi {
                        let sy = (y as isize + yoff) as usize;
                        let s0 = (sy * w) as isize + xoff;
                        let d = &mut dst[(y - y0) * w + xlo..(y - y0) * w + xhi];
                        d.copy_from_slice(&src[(s0 + xlo as isize) as usize..(s0 + xhi as isize) as usize]);
                    }
                }
            }
        }
    }
}

/// `out[n] = W · unfold(x[n])` for every sample; `w` is `Cout×(Cin·k·k)`.
fn conv_forward(geom: &ConvGeom, x: &Tensor, w: &[f64], cout: usize, out: &mut Tensor) {
    let (h, wd, p) = (geom.h, geom.w, geom.h * geom.w);
    let rows = geom.rows();
    let band = geom.band();
    let pointwise = geom.k == 1;
    for_each_chunk_mut(out.data_mut(), cout * p, |n, dst| {
        let src = x.sample(n);
        let mut col = if pointwise { Vec::new() } else { vec![0.0; rows * band * wd] };
        for y0 in (0..h).step_by(band) {
            let y1 = (y0 + band).min(h);
            let cw = (y1 - y0) * wd;
            let b: Operand<'_> = if pointwise {
                (&src[y0 * wd..], p, 1)
            } else {
                geom.im2col(src, &mut col, y0, y1);
                (&col[..rows * cw], cw, 1)
            };
            gemm_strided(cout, rows, cw, (w, rows, 1), b, 0.0, &mut dst[y0 * wd..], p, 1);
        }
    });
}

/// `Σₙ dY[n] · unfold(x[n])ᵀ`, summed over samples in index order.
fn conv_weight_grad(geom: &ConvGeom, x: &Tensor, gy: &Tensor, cout: usize) -> Vec<f64> {
    let (h, wd, p) = (geom.h, geom.w, geom.h * geom.w);
    let rows = geom.rows();
    let band = geom.band();
    let pointwise = geom.k == 1;
    let partials = map_indices(x.shape().n(), |n| {
        let (src, gn) = (x.sample(n), gy.sample(n));
        let mut col = if pointwise { Vec::new() } else { vec![0.0; rows * band * wd] };
        let mut gw = vec![0.0; cout * rows];
        for y0 in (0..h).step_by(band) {
            let y1 = (y0 + band).min(h);
            let cw = (y1 - y0) * wd;
            let colt: Operand<'_> = if pointwise {
                (&src[y0 * wd..], 1, p)
            } else {
                geom.im2col(src, &mut col, y0, y1);
                (&col[..rows * cw], 1, cw)
            };
            gemm_strided(cout, cw, rows, (&gn[y0 * wd..], p, 1), colt, 1.0, &mut gw, rows, 1);
        }
        gw
    });
    let mut total = vec![0.0; cout * rows];
    for part in partials {
        total.iter_mut().zip(part).for_each(|(t, v)| *t += v);
    }
    total
}

/// Kernel of the adjoint convolution: channels swapped and taps rotated by
/// 180°, laid out as `Cin×(Cout·k·k)`.
fn adjoint_kernel(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let kk = k * k;
    let mut out = vec![0.0; w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for t in 0..kk {
                out[(ci * cout + co) * kk + (kk - 1 - t)] = w[(co * cin + ci) * kk + t];
            }
        }
    }
    out
}

impl Graph {
    /// Convolution with an odd `k×k` kernel of shape `Cout×Cin×k×k`, stride 1,
    /// and zero padding `dilation·(k−1)/2` so the output keeps `H×W`.
    /// `bias`, when present, has shape `1×Cout×1×1`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, dilation: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let [cout, cin, k, k2] = ws.0;
        if k != k2 || k % 2 == 0 || cin != xs.c() || dilation == 0 {
            return Err(Error::ShapeMismatch { expected: Shape::new(cout, xs.c(), k, k), got: ws });
        }
        if let Some(b) = bias {
            self.value(b).expect_shape(Shape::new(1, cout, 1, 1))?;
        }
        let geom = ConvGeom { cin, h: xs.h(), w: xs.w(), k, dilation, pad: dilation * (k - 1) / 2 };
        let out_shape = xs.with_c(cout);
        let p = xs.plane();

        let mut out = Tensor::zeros(out_shape);
        conv_forward(&geom, self.value(x), self.value(weight).data(), cout, &mut out);
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for n in 0..xs.n() {
                for (co, chunk) in out.sample_mut(n).chunks_exact_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bv[co]);
                }
            }
        }

        let mut parents = vec![x, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let has_bias = bias.is_some();
        let x_grad = self.requires_grad(x);
        Ok(self.push(
            out,
            &parents,
            Box::new(move |g, pv, _| {
                let (xv, wv) = (pv[0], pv[1].data());
                let gw = Tensor::from_vec(ws, conv_weight_grad(&geom, xv, g, cout)).expect("weight volume");
                // dX is the convolution of dY with the adjoint kernel.
                let gx = x_grad.then(|| {
                    let mut gx = Tensor::zeros(xs);
                    let adj = ConvGeom { cin: cout, ..geom };
                    conv_forward(&adj, g, &adjoint_kernel(wv, cout, cin, k), cin, &mut gx);
                    gx
                });
                let mut res = vec![gx, Some(gw)];
                if has_bias {
                    let mut gb = Tensor::zeros(Shape::new(1, cout, 1, 1));
                    for n in 0..xs.n() {
                        for (co, chunk) in g.sample(n).chunks_exact(p).enumerate() {
                            gb.data_mut()[co] += chunk.iter().sum::<f64>();
                        }
                    }
                    res.push(Some(gb));
                }
                res
            }),
        ))
    }
}

/// Reference convolution by direct summation, for tests.
#[cfg(test)]
pub(crate) fn conv2d_naive(x: &Tensor, w: &Tensor, b: Option<&Tensor>, dilation: usize) -> Tensor {
    let [n, cin, h, wd] = x.shape().0;
    let [cout, _, k, _] = w.shape().0;
    let pad = (dilation * (k - 1) / 2) as isize;
    Tensor::from_fn(Shape::new(n, cout, h, wd), |ni, co, y, xx| {
        let mut acc = b.map_or(0.0, |b| b.data()[co]);
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let sy = y as isize + (ky * dilation) as isize - pad;
                    let sx = xx as isize + (kx * dilation) as isize - pad;
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                        acc += w.at(co, ci, ky, kx) * x.at(ni, ci, sy as usize, sx as usize);
                    }
                }
            }
        }
        acc
    })
}
