//! Single-head spatial self-attention without materializing the full
//! `HW×HW` score matrix.

use alloc::boxed::Box;
use alloc::vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::ops::conv::gemm;
use crate::tensor::Tensor;

const BLOCK: usize = 256;

/// Copy columns `[i0, i0+b)` of a `c×p` row-major matrix into a `b×c` block.
fn gather_t(src: &[f64], c: usize, p: usize, i0: usize, b: usize, dst: &mut [f64]) {
    for i in 0..b {
        for ch in 0..c {
            dst[i * c + ch] = src[ch * p + i0 + i];
        }
    }
}

fn softmax_rows(s: &mut [f64], cols: usize) {
    for row in s.chunks_exact_mut(cols) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - m);
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
}

impl Graph {
    /// `softmax(QᵀK/√C)·Vᵀ` over the `H·W` spatial tokens of each sample.
    pub fn self_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let s = self.shape(q);
        for other in [k, v] {
            if self.shape(other) != s {
                return Err(Error::ShapeMismatch { expected: s, got: self.shape(other) });
            }
        }
        let (c, p) = (s.c(), s.plane());
        let scale = 1.0 / math::sqrt(c as f64);
        let mut out = Tensor::zeros(s);
        {
            let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
            let mut qb = vec![0.0; BLOCK * c];
            let mut sb = vec![0.0; BLOCK * p];
            let mut ob = vec![0.0; BLOCK * c];
            for n in 0..s.n() {
                let (qs, ks, vs) = (qv.sample(n), kv.sample(n), vv.sample(n));
                let dst = out.sample_mut(n);
                for i0 in (0..p).step_by(BLOCK) {
                    let b = BLOCK.min(p - i0);
                    gather_t(qs, c, p, i0, b, &mut qb);
                    gemm(b, c, p, &qb, false, ks, false, 0.0, &mut sb);
                    sb[..b * p].iter_mut().for_each(|x| *x *= scale);
                    softmax_rows(&mut sb[..b * p], p);
                    gemm(b, p, c, &sb, false, vs, true, 0.0, &mut ob);
                    for i in 0..b {
                        for ch in 0..c {
                            dst[ch * p + i0 + i] = ob[i * c + ch];
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            &[q, k, v],
            Box::new(move |g, pv, _| {
                let (qv, kv, vv) = (pv[0], pv[1], pv[2]);
                let mut gq = Tensor::zeros(s);
                let mut gk = Tensor::zeros(s);
                let mut gv = Tensor::zeros(s);
                let mut qb = vec![0.0; BLOCK * c];
                let mut gob = vec![0.0; BLOCK * c];
                let mut sb = vec![0.0; BLOCK * p];
                let mut dpb = vec![0.0; BLOCK * p];
                let mut gqb = vec![0.0; BLOCK * c];
                for n in 0..s.n() {
                    let (qs, ks, vs, gs) = (qv.sample(n), kv.sample(n), vv.sample(n), g.sample(n));
                    for i0 in (0..p).step_by(BLOCK) {
                        let b = BLOCK.min(p - i0);
                        gather_t(qs, c, p, i0, b, &mut qb);
                        gather_t(gs, c, p, i0, b, &mut gob);
                        gemm(b, c, p, &qb, false, ks, false, 0.0, &mut sb);
                        sb[..b * p].iter_mut().for_each(|x| *x *= scale);
                        softmax_rows(&mut sb[..b * p], p);
                        // dV += dOᵀ·P ; dP = dO·V
                        gemm(c, b, p, &gob, true, &sb, false, 1.0, gv.sample_mut(n));
                        gemm(b, c, p, &gob, false, vs, false, 0.0, &mut dpb);
                        for (prow, drow) in sb[..b * p].chunks_exact(p).zip(dpb[..b * p].chunks_exact_mut(p)) {
                            let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                            for (d, &pp) in drow.iter_mut().zip(prow) {
                                *d = pp * (*d - dot) * scale;
                            }
                        }
                        // dQ = dS·Kᵀ ; dK += Q·dS
                        gemm(b, p, c, &dpb, false, ks, true, 0.0, &mut gqb);
                        gemm(c, b, p, &qb, true, &dpb, false, 1.0, gk.sample_mut(n));
                        let gqs = gq.sample_mut(n);
                        for i in 0..b {
                            for ch in 0..c {
                                gqs[ch * p + i0 + i] = gqb[i * c + ch];
                            }
                        }
                    }
                }
                vec![Some(gq), Some(gk), Some(gv)]
            }),
        ))
    }
}
