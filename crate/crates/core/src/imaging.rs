//! Image primitives shared by the network, the losses and the metrics:
//! colour conversion, residual maps, Sobel gradients and the statistical
//! masks that partition an image pair into salient and textured regions.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::ops::{filter1d_replicate, Axis};
use crate::tensor::{Shape, Tensor};

/// Luma weights of ITU-R BT.601.
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// Offset of the chroma planes in unit range.
pub const CHROMA_OFFSET: f64 = 0.5;

/// Guard added to standard deviations before dividing.
pub const STD_EPS: f64 = 1e-9;

/// Row-major single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::DataLength { expected: h * w, got: data.len() });
        }
        Ok(Plane { h, w, data })
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Plane { h, w, data: alloc::vec![v; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Plane { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane { h: self.h, w: self.w, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Result<Plane> {
        self.expect_dims(other)?;
        Ok(Plane { h: self.h, w: self.w, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn mean(&self) -> f64 {
        math::mean(&self.data)
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        math::std_pop(&self.data)
    }

    pub fn expect_dims(&self, other: &Plane) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::PlaneMismatch(self.h, self.w, other.h, other.w));
        }
        Ok(())
    }

    /// View as a `1×1×H×W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.h, self.w), self.data.clone()).expect("plane volume")
    }

    /// Extract plane `(n, c)` of a tensor.
    pub fn from_tensor(t: &Tensor, n: usize, c: usize) -> Plane {
        let s = t.shape();
        Plane { h: s.h(), w: s.w(), data: t.plane(n, c).to_vec() }
    }

    /// Stack planes of equal size into an `N×1×H×W` tensor.
    pub fn stack(planes: &[&Plane]) -> Result<Tensor> {
        let first = planes.first().ok_or(Error::Empty("plane stack"))?;
        let mut data = Vec::with_capacity(planes.len() * first.len());
        for p in planes {
            first.expect_dims(p)?;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(Shape::new(planes.len(), 1, first.h, first.w), data)
    }
}

/// Three colour planes in unit range.
#[derive(Clone, Debug, PartialEq)]
pub struct Rgb {
    pub r: Plane,
    pub g: Plane,
    pub b: Plane,
}

impl Rgb {
    pub fn new(r: Plane, g: Plane, b: Plane) -> Result<Self> {
        r.expect_dims(&g)?;
        r.expect_dims(&b)?;
        Ok(Rgb { r, g, b })
    }

    /// Grey image with all three channels equal to `p`.
    pub fn gray(p: &Plane) -> Self {
        Rgb { r: p.clone(), g: p.clone(), b: p.clone() }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.r.dims()
    }
}

/// Luma and offset-centred chroma planes.
#[derive(Clone, Debug, PartialEq)]
pub struct YCbCr {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
}

/// BT.601 full-range conversion; chroma is centred on 0.5.
pub fn rgb_to_ycbcr(rgb: &Rgb) -> Result<YCbCr> {
    rgb.r.expect_dims(&rgb.g)?;
    rgb.r.expect_dims(&rgb.b)?;
    let (h, w) = rgb.dims();
    let n = h * w;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (r, g, b) = (rgb.r.data[i], rgb.g.data[i], rgb.b.data[i]);
        let luma = KR * r + KG * g + KB * b;
        y.push(luma.clamp(0.0, 1.0));
        cb.push(CHROMA_OFFSET + (b - luma) / (2.0 * (1.0 - KB)));
        cr.push(CHROMA_OFFSET + (r - luma) / (2.0 * (1.0 - KR)));
    }
    Ok(YCbCr { y: Plane { h, w, data: y }, cb: Plane { h, w, data: cb }, cr: Plane { h, w, data: cr } })
}

/// Exact inverse of [`rgb_to_ycbcr`], clamped to `[0, 1]`.
pub fn ycbcr_to_rgb(ycc: &YCbCr) -> Result<Rgb> {
    ycc.y.expect_dims(&ycc.cb)?;
    ycc.y.expect_dims(&ycc.cr)?;
    let (h, w) = ycc.y.dims();
    let n = h * w;
    let (mut r, mut g, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let luma = ycc.y.data[i];
        let rv = luma + 2.0 * (1.0 - KR) * (ycc.cr.data[i] - CHROMA_OFFSET);
        let bv = luma + 2.0 * (1.0 - KB) * (ycc.cb.data[i] - CHROMA_OFFSET);
        let gv = (luma - KR * rv - KB * bv) / KG;
        r.push(rv.clamp(0.0, 1.0));
        g.push(gv.clamp(0.0, 1.0));
        b.push(bv.clamp(0.0, 1.0));
    }
    Ok(Rgb { r: Plane { h, w, data: r }, g: Plane { h, w, data: g }, b: Plane { h, w, data: b } })
}

/// A registered infrared/visible pair with the visible image's luma and
/// chroma precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcePair {
    pub ir: Plane,
    pub vis_rgb: Rgb,
    pub vis: YCbCr,
}

impl SourcePair {
    pub fn new(ir: Plane, vis_rgb: Rgb) -> Result<Self> {
        ir.expect_dims(&vis_rgb.r)?;
        let vis = rgb_to_ycbcr(&vis_rgb)?;
        Ok(SourcePair { ir, vis_rgb, vis })
    }

    /// Pair of two single-channel images (e.g. medical modalities).
    pub fn grayscale(ir: Plane, other: Plane) -> Result<Self> {
        let rgb = Rgb::gray(&other);
        SourcePair::new(ir, rgb)
    }

    pub fn vis_y(&self) -> &Plane {
        &self.vis.y
    }

    pub fn dims(&self) -> (usize, usize) {
        self.ir.dims()
    }

    pub fn residual(&self) -> ResidualMap {
        compute_residual(&self.ir, &self.vis.y).expect("pair dims checked at construction")
    }
}

/// Signed modality difference `IR − VIS_Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualMap(pub Plane);

/// `ir − vis_y`, element-wise and unclamped.
pub fn compute_residual(ir: &Plane, vis_y: &Plane) -> Result<ResidualMap> {
    Ok(ResidualMap(ir.zip_map(vis_y, |a, b| a - b)?))
}

pub const SOBEL_SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];
pub const SOBEL_DIFF: [f64; 3] = [-1.0, 0.0, 1.0];

/// Horizontal and vertical 3×3 Sobel responses with replicate borders.
pub fn sobel_components(img: &Plane) -> (Plane, Plane) {
    let t = img.to_tensor();
    let gx = filter1d_replicate(&filter1d_replicate(&t, &SOBEL_DIFF, Axis::Horizontal), &SOBEL_SMOOTH, Axis::Vertical);
    let gy = filter1d_replicate(&filter1d_replicate(&t, &SOBEL_SMOOTH, Axis::Horizontal), &SOBEL_DIFF, Axis::Vertical);
    (Plane::from_tensor(&gx, 0, 0), Plane::from_tensor(&gy, 0, 0))
}

/// Sobel gradient magnitude `√(Gx² + Gy²)`.
pub fn sobel_gradient(img: &Plane) -> Plane {
    let (gx, gy) = sobel_components(img);
    gx.zip_map(&gy, |a, b| math::sqrt(a * a + b * b)).expect("same dims")
}

fn indicator_above(p: &Plane, threshold: f64) -> Plane {
    p.map(|v| if v > threshold { 1.0 } else { 0.0 })
}

/// Texture mask: 1 where the Sobel magnitude of `vis_y` exceeds its mean.
pub fn texture_mask(vis_y: &Plane) -> Plane {
    let s = sobel_gradient(vis_y);
    let mu = s.mean();
    indicator_above(&s, mu)
}

/// Thermal mask: 1 where `ir > μ(ir) + σ(ir)`.
pub fn thermal_mask(ir: &Plane) -> Plane {
    indicator_above(ir, ir.mean() + ir.std())
}

/// `(x − μ) / (σ + ε)`.
pub fn standardize(p: &Plane) -> Plane {
    let (mu, sd) = (p.mean(), p.std());
    p.map(|v| (v - mu) / (sd + STD_EPS))
}

/// The saliency map that drives the adaptive weight: the soft XOR of the
/// standardized infrared and residual saliencies.
pub fn enhanced_saliency(ir: &Plane, residual: &ResidualMap) -> Result<Plane> {
    let s_ir = standardize(ir).map(math::sigmoid);
    let s_m = standardize(&residual.0).map(math::sigmoid);
    s_ir.zip_map(&s_m, |a, b| (a * (1.0 - b) + b * (1.0 - a)) / 2.0)
}

/// Adaptive contrastive weight `w` and its complement `w̄ = 1 − w`.
pub fn adaptive_weight(ir: &Plane, residual: &ResidualMap) -> Result<(Plane, Plane)> {
    let s_en = enhanced_saliency(ir, residual)?;
    let w = indicator_above(&s_en, s_en.mean() + s_en.std());
    let w_bar = w.map(|v| 1.0 - v);
    Ok((w, w_bar))
}

/// Every binary mask used by the objectives for one image pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    pub texture: Plane,
    pub thermal: Plane,
    pub weight: Plane,
    pub weight_complement: Plane,
}

impl MaskSet {
    pub fn compute(ir: &Plane, vis_y: &Plane) -> Result<Self> {
        let residual = compute_residual(ir, vis_y)?;
        let (weight, weight_complement) = adaptive_weight(ir, &residual)?;
        Ok(MaskSet { texture: texture_mask(vis_y), thermal: thermal_mask(ir), weight, weight_complement })
    }

    pub fn all(&self) -> [&Plane; 4] {
        [&self.texture, &self.thermal, &self.weight, &self.weight_complement]
    }
}
