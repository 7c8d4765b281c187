use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::tensor::{Shape, Tensor};

impl Graph {
    /// Sum over `C×H×W` for each sample, giving `N×1×1×1`.
    pub fn sum_per_sample(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let v = self.value(x);
        let data: Vec<f64> = (0..s.n()).map(|n| v.sample(n).iter().sum()).collect();
        let out = Tensor::from_vec(Shape::new(s.n(), 1, 1, 1), data).expect("per-sample");
        self.push(
            out,
            &[x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(s);
                for n in 0..s.n() {
                    let gn = g.data()[n];
                    gx.sample_mut(n).iter_mut().for_each(|v| *v = gn);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean over `C×H×W` for each sample.
    pub fn mean_per_sample(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let k = 1.0 / (s.c() * s.plane()) as f64;
        let sum = self.sum_per_sample(x);
        self.scale(sum, k)
    }

    /// Mean of every element, as a `1×1×1×1` scalar.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let count = s.numel() as f64;
        let out = Tensor::scalar(self.value(x).sum() / count);
        self.push(out, &[x], Box::new(move |g, _, _| vec![Some(Tensor::full(s, g.data()[0] / count))]))
    }

    /// Sum of every element.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, &[x], Box::new(move |g, _, _| vec![Some(Tensor::full(s, g.data()[0]))]))
    }

    /// Spatial average per channel: `N×C×1×1`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let p = s.plane();
        let v = self.value(x);
        let data: Vec<f64> = v.data().chunks_exact(p).map(|c| c.iter().sum::<f64>() / p as f64).collect();
        let out = Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), data).expect("pool");
        self.push(
            out,
            &[x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(s);
                for (chunk, &gv) in gx.data_mut().chunks_exact_mut(p).zip(g.data()) {
                    chunk.iter_mut().for_each(|v| *v = gv / p as f64);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Spatial maximum per channel: `N×C×1×1`. The gradient goes to the
    /// first maximal position.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let p = s.plane();
        let v = self.value(x);
        let mut arg = Vec::with_capacity(s.n() * s.c());
        let data: Vec<f64> = v
            .data()
            .chunks_exact(p)
            .map(|c| {
                let (i, m) = c.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bm), (i, &v)| {
                    if v > bm {
                        (i, v)
                    } else {
                        (bi, bm)
                    }
                });
                arg.push(i);
                m
            })
            .collect();
        let out = Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), data).expect("pool");
        self.push(
            out,
            &[x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(s);
                for (k, (&a, &gv)) in arg.iter().zip(g.data()).enumerate() {
                    gx.data_mut()[k * p + a] = gv;
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean across channels: `N×1×H×W`.
    pub fn channel_mean(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (c, p) = (s.c(), s.plane());
        let v = self.value(x);
        let mut out = Tensor::zeros(s.with_c(1));
        for n in 0..s.n() {
            let src = v.sample(n);
            let dst = out.sample_mut(n);
            for ci in 0..c {
                for (d, &s) in dst.iter_mut().zip(&src[ci * p..(ci + 1) * p]) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|d| *d /= c as f64);
        }
        self.push(
            out,
            &[x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(s);
                for n in 0..s.n() {
                    let gs = g.sample(n);
                    let dst = gx.sample_mut(n);
                    for ci in 0..c {
                        for (d, &gv) in dst[ci * p..(ci + 1) * p].iter_mut().zip(gs) {
                            *d = gv / c as f64;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Maximum across channels: `N×1×H×W`.
    pub fn channel_max(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (c, p) = (s.c(), s.plane());
        let v = self.value(x);
        let mut out = Tensor::full(s.with_c(1), f64::NEG_INFINITY);
        let mut arg = vec![0usize; s.n() * p];
        for n in 0..s.n() {
            let src = v.sample(n);
            let dst = out.sample_mut(n);
            for ci in 0..c {
                for i in 0..p {
                    let val = src[ci * p + i];
                    if val > dst[i] {
                        dst[i] = val;
                        arg[n * p + i] = ci;
                    }
                }
            }
        }
        self.push(
            out,
            &[x],
            Box::new(move |g, _, _| {
                let mut gx = Tensor::zeros(s);
                for n in 0..s.n() {
                    let gs = g.sample(n);
                    let dst = gx.sample_mut(n);
                    for i in 0..p {
                        dst[arg[n * p + i] * p + i] = gs[i];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}
