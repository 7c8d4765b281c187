use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::math;
use crate::tensor::{Shape, Tensor};

/// Strides into a tensor of shape `src` when indexed with broadcast shape `out`.
fn broadcast_strides(src: Shape, out: Shape) -> [usize; 4] {
    let [_, c, h, w] = src.0;
    let full = [c * h * w, h * w, w, 1];
    let mut s = [0; 4];
    for i in 0..4 {
        s[i] = if src.0[i] == 1 && out.0[i] != 1 { 0 } else { full[i] };
    }
    s
}

fn broadcast_apply(a: &Tensor, b: &Tensor, out: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == out && b.shape() == out {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(out, data).expect("same shape");
    }
    let sa = broadcast_strides(a.shape(), out);
    let sb = broadcast_strides(b.shape(), out);
    let (ad, bd) = (a.data(), b.data());
    let [n, c, h, w] = out.0;
    let mut data = Vec::with_capacity(out.numel());
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let oa = ni * sa[0] + ci * sa[1] + y * sa[2];
                let ob = ni * sb[0] + ci * sb[1] + y * sb[2];
                for x in 0..w {
                    data.push(f(ad[oa + x * sa[3]], bd[ob + x * sb[3]]));
                }
            }
        }
    }
    Tensor::from_vec(out, data).expect("broadcast volume")
}

/// Sum `g` down to `target` over the broadcast dimensions.
pub(crate) fn reduce_to(g: Tensor, target: Shape) -> Tensor {
    if g.shape() == target {
        return g;
    }
    let mut out = Tensor::zeros(target);
    let st = broadcast_strides(target, g.shape());
    let [n, c, h, w] = g.shape().0;
    let gd = g.data();
    let od = out.data_mut();
    let mut i = 0;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let o = ni * st[0] + ci * st[1] + y * st[2];
                for x in 0..w {
                    od[o + x * st[3]] += gd[i];
                    i += 1;
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Graph {
    fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = sa.broadcast(sb)?;
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            match op {
                Binary::Add => broadcast_apply(va, vb, out, |x, y| x + y),
                Binary::Sub => broadcast_apply(va, vb, out, |x, y| x - y),
                Binary::Mul => broadcast_apply(va, vb, out, |x, y| x * y),
                Binary::Div => broadcast_apply(va, vb, out, |x, y| x / y),
            }
        };
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |g, p, _| {
                let (va, vb) = (p[0], p[1]);
                let (ga, gb) = match op {
                    Binary::Add => (g.clone(), g.clone()),
                    Binary::Sub => (g.clone(), g.map(|v| -v)),
                    Binary::Mul => {
                        (broadcast_apply(g, vb, out, |g, y| g * y), broadcast_apply(g, va, out, |g, x| g * x))
                    }
                    Binary::Div => {
                        let ga = broadcast_apply(g, vb, out, |g, y| g / y);
                        let q = broadcast_apply(va, vb, out, |x, y| -x / (y * y));
                        let gb = broadcast_apply(g, &q, out, |g, q| g * q);
                        (ga, gb)
                    }
                };
                vec![Some(reduce_to(ga, sa)), Some(reduce_to(gb, sb))]
            }),
        ))
    }

    /// Broadcasting `a + b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    /// Broadcasting `a − b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    /// Broadcasting element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    /// Broadcasting element-wise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    fn unary(&mut self, x: Var, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        self.push(
            value,
            &[x],
            Box::new(move |g, p, out| {
                let d: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(p[0].data())
                    .zip(out.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::from_vec(g.shape(), d).expect("same shape"))]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, math::sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, math::tanh, |_, y| 1.0 - y * y)
    }

    /// Square root; the gradient at zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| math::sqrt(v.max(0.0)), |_, y| if y > 0.0 { 0.5 / y } else { 0.0 })
    }

    /// Absolute value with subgradient 0 at the origin.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(
            x,
            f64::abs,
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    /// `k · x` for a constant `k`.
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v * k);
        self.push(value, &[x], Box::new(move |g, _, _| vec![Some(g.map(|v| v * k))]))
    }

    /// `x + k` for a constant `k`.
    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v + k);
        self.push(value, &[x], Box::new(|g, _, _| vec![Some(g.clone())]))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let shapes: Vec<Shape> = xs.iter().map(|&x| self.shape(x)).collect();
        let first = shapes[0];
        for s in &shapes {
            if s.n() != first.n() || s.h() != first.h() || s.w() != first.w() {
                return Err(crate::error::Error::ShapeMismatch { expected: first, got: *s });
            }
        }
        let total_c: usize = shapes.iter().map(|s| s.c()).sum();
        let out_shape = first.with_c(total_c);
        let mut out = Tensor::zeros(out_shape);
        let plane = first.plane();
        for n in 0..first.n() {
            let mut c0 = 0;
            for (&x, s) in xs.iter().zip(&shapes) {
                let src = self.value(x).sample(n);
                let dst = &mut out.sample_mut(n)[c0 * plane..(c0 + s.c()) * plane];
                dst.copy_from_slice(src);
                c0 += s.c();
            }
        }
        let channels: Vec<usize> = shapes.iter().map(|s| s.c()).collect();
        Ok(self.push(
            out,
            xs,
            Box::new(move |g, p, _| {
                let mut c0 = 0;
                let mut res = Vec::with_capacity(channels.len());
                for (k, &c) in channels.iter().enumerate() {
                    let mut gi = Tensor::zeros(p[k].shape());
                    for n in 0..gi.shape().n() {
                        gi.sample_mut(n).copy_from_slice(&g.sample(n)[c0 * plane..(c0 + c) * plane]);
                    }
                    res.push(Some(gi));
                    c0 += c;
                }
                res
            }),
        ))
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x);
        assert!(start + len <= s.c(), "channel slice out of range");
        let plane = s.plane();
        let mut out = Tensor::zeros(s.with_c(len));
        for n in 0..s.n() {
            out.sample_mut(n).copy_from_slice(&self.value(x).sample(n)[start * plane..(start + len) * plane]);
        }
        self.push(
            out,
            &[x],
            Box::new(move |g, p, _| {
                let mut gx = Tensor::zeros(p[0].shape());
                for n in 0..s.n() {
                    gx.sample_mut(n)[start * plane..(start + len) * plane].copy_from_slice(g.sample(n));
                }
                vec![Some(gx)]
            }),
        )
    }
}
