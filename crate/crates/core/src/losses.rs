//! Training objectives.
//!
//! Every term is evaluated per sample on `N×1×H×W` batches and averaged
//! over the batch. `ℓ₂` norms are root-mean-square values and `ℓ₁` norms are
//! mean absolute values, so the weights do not depend on resolution. Masks
//! enter as constants: no gradient flows through an indicator.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::imaging::{MaskSet, Plane, SOBEL_DIFF, SOBEL_SMOOTH};
use crate::math;
use crate::tensor::Tensor;

/// How the SSIM term enters the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimSign {
    /// `(1 − SSIM(F, IR)) + (1 − SSIM(F, VIS_Y))`; minimizing raises similarity.
    Dissimilarity,
    /// `SSIM(F, IR) + SSIM(F, VIS_Y)`, which rewards dissimilarity under
    /// minimization. Kept for ablation only.
    Raw,
}

/// Variant of the fidelity term, selected by the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastMode {
    /// Masked positive/negative ratio of spectral distances.
    Frequency,
    /// Masked spectral distance to the positives only.
    FrequencyL1,
    /// The same ratio with spatial mean-absolute distances.
    Spatial,
    /// Unmasked spectral distance to both sources.
    Unweighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub ssim_range: f64,
    pub ssim_sign: SsimSign,
    pub contrast: ContrastMode,
    /// Include `λ₂·ℒ_s` in the fusion loss.
    pub use_ssim: bool,
    /// Include the saliency structure loss of the auxiliary decoder.
    pub use_saliency: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.3,
            lambda2: 5.0,
            eps: 1e-9,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            ssim_range: 1.0,
            ssim_sign: SsimSign::Dissimilarity,
            contrast: ContrastMode::Frequency,
            use_ssim: true,
            use_saliency: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(alloc::format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive(self.lambda1, "lambda1")?;
        positive(self.lambda2, "lambda2")?;
        positive(self.eps, "eps")?;
        positive(self.ssim_sigma, "ssim_sigma")?;
        positive(self.ssim_range, "ssim_range")?;
        if self.ssim_window.is_multiple_of(2) {
            return Err(Error::Config("ssim_window must be odd".into()));
        }
        Ok(())
    }

    fn c1(&self) -> f64 {
        let v = self.ssim_k1 * self.ssim_range;
        v * v
    }

    fn c2(&self) -> f64 {
        let v = self.ssim_k2 * self.ssim_range;
        v * v
    }
}

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size).map(|i| math::exp(-((i as f64 - r) * (i as f64 - r)) / (2.0 * sigma * sigma))).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Masks of a batch stacked as `N×1×H×W` constants.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMasks {
    pub texture: Tensor,
    pub thermal: Tensor,
    pub weight: Tensor,
    pub weight_complement: Tensor,
    pub per_sample: Vec<MaskSet>,
}

impl BatchMasks {
    /// Masks for every sample of `N×1×H×W` infrared and visible-luma batches.
    pub fn compute(ir: &Tensor, vis_y: &Tensor) -> Result<Self> {
        let s = ir.shape();
        if s != vis_y.shape() || s.c() != 1 {
            return Err(Error::ShapeMismatch { expected: s.with_c(1), got: vis_y.shape() });
        }
        let per_sample: Vec<MaskSet> = (0..s.n())
            .map(|n| MaskSet::compute(&Plane::from_tensor(ir, n, 0), &Plane::from_tensor(vis_y, n, 0)))
            .collect::<Result<_>>()?;
        let stack = |pick: fn(&MaskSet) -> &Plane| {
            let planes: Vec<&Plane> = per_sample.iter().map(pick).collect();
            Plane::stack(&planes)
        };
        Ok(BatchMasks {
            texture: stack(|m| &m.texture)?,
            thermal: stack(|m| &m.thermal)?,
            weight: stack(|m| &m.weight)?,
            weight_complement: stack(|m| &m.weight_complement)?,
            per_sample,
        })
    }
}

/// Differentiable Sobel magnitude.
pub fn sobel_magnitude(g: &mut Graph, x: Var) -> Result<Var> {
    let gx = g.filter_separable(x, &SOBEL_DIFF, &SOBEL_SMOOTH);
    let gy = g.filter_separable(x, &SOBEL_SMOOTH, &SOBEL_DIFF);
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let s = g.add(gx2, gy2)?;
    Ok(g.sqrt(s))
}

/// Per-sample root-mean-square, `N×1×1×1`.
fn rms(g: &mut Graph, x: Var) -> Var {
    let sq = g.square(x);
    let m = g.mean_per_sample(sq);
    g.sqrt(m)
}

/// `‖∇𝓜′ − ∇IR‖₂ − λ₁·‖𝓜′·𝔪‖₂` per sample.
pub fn loss_grad_per_sample(g: &mut Graph, m_prime: Var, ir: Var, texture: Var, lambda1: f64) -> Result<Var> {
    let sm = sobel_magnitude(g, m_prime)?;
    let si = sobel_magnitude(g, ir)?;
    let d = g.sub(sm, si)?;
    let t1 = rms(g, d);
    let masked = g.mul(m_prime, texture)?;
    let t2 = rms(g, masked);
    let t2 = g.scale(t2, lambda1);
    g.sub(t1, t2)
}

/// `−‖𝓜′·T‖₂` per sample.
pub fn loss_reg_per_sample(g: &mut Graph, m_prime: Var, thermal: Var) -> Result<Var> {
    let masked = g.mul(m_prime, thermal)?;
    let r = rms(g, masked);
    Ok(g.scale(r, -1.0))
}

/// Mean complex modulus of the spectrum of `a − b`, per sample.
pub fn freq_l1(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let spec = g.fft2(d)?;
    let modulus = g.complex_abs(spec)?;
    Ok(g.mean_per_sample(modulus))
}

/// Mean absolute difference, per sample.
pub fn spatial_l1(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let ad = g.abs(d);
    Ok(g.mean_per_sample(ad))
}

fn sum_vars(g: &mut Graph, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = g.add(acc, x)?;
    }
    Ok(acc)
}

/// Positive and negative distances of the masked contrastive pairs.
fn contrast_terms(
    g: &mut Graph,
    fused: Var,
    ir: Var,
    vis_y: Var,
    w: Var,
    w_bar: Var,
    dist: fn(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<(Var, Var)> {
    let fw = g.mul(fused, w)?;
    let fwb = g.mul(fused, w_bar)?;
    let iw = g.mul(ir, w)?;
    let iwb = g.mul(ir, w_bar)?;
    let vw = g.mul(vis_y, w)?;
    let vwb = g.mul(vis_y, w_bar)?;
    let p1 = dist(g, fw, iw)?;
    let p2 = dist(g, fwb, vwb)?;
    let pos = g.add(p1, p2)?;
    let n1 = dist(g, fw, iwb)?;
    let n2 = dist(g, fw, vw)?;
    let n3 = dist(g, fwb, iw)?;
    let n4 = dist(g, fwb, vwb)?;
    let neg = sum_vars(g, &[n1, n2, n3, n4])?;
    Ok((pos, neg))
}

/// Fidelity term per sample under the chosen variant.
#[allow(clippy::too_many_arguments)]
pub fn loss_contrastive_per_sample(
    g: &mut Graph,
    fused: Var,
    ir: Var,
    vis_y: Var,
    w: Var,
    w_bar: Var,
    eps: f64,
    mode: ContrastMode,
) -> Result<Var> {
    match mode {
        ContrastMode::Frequency | ContrastMode::Spatial => {
            let dist = if mode == ContrastMode::Frequency { freq_l1 } else { spatial_l1 };
            let (pos, neg) = contrast_terms(g, fused, ir, vis_y, w, w_bar, dist)?;
            let den = g.add_scalar(neg, eps);
            g.div(pos, den)
        }
        ContrastMode::FrequencyL1 => {
            let fw = g.mul(fused, w)?;
            let fwb = g.mul(fused, w_bar)?;
            let iw = g.mul(ir, w)?;
            let vwb = g.mul(vis_y, w_bar)?;
            let a = freq_l1(g, fw, iw)?;
            let b = freq_l1(g, fwb, vwb)?;
            g.add(a, b)
        }
        ContrastMode::Unweighted => {
            let a = freq_l1(g, fused, ir)?;
            let b = freq_l1(g, fused, vis_y)?;
            g.add(a, b)
        }
    }
}

/// Mean SSIM per sample with a Gaussian window and replicate borders.
pub fn ssim_per_sample(g: &mut Graph, x: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    let taps = gaussian_taps(cfg.ssim_window, cfg.ssim_sigma);
    let blur = |g: &mut Graph, v: Var| g.filter_separable(v, &taps, &taps);
    let mx = blur(g, x);
    let my = blur(g, y);
    let xx = g.square(x);
    let yy = g.square(y);
    let xy = g.mul(x, y)?;
    let exx = blur(g, xx);
    let eyy = blur(g, yy);
    let exy = blur(g, xy);
    let mx2 = g.square(mx);
    let my2 = g.square(my);
    let mxy = g.mul(mx, my)?;
    let vx = g.sub(exx, mx2)?;
    let vy = g.sub(eyy, my2)?;
    let cxy = g.sub(exy, mxy)?;
    let l_num = g.scale(mxy, 2.0);
    let l_num = g.add_scalar(l_num, cfg.c1());
    let c_num = g.scale(cxy, 2.0);
    let c_num = g.add_scalar(c_num, cfg.c2());
    let l_den = g.add(mx2, my2)?;
    let l_den = g.add_scalar(l_den, cfg.c1());
    let c_den = g.add(vx, vy)?;
    let c_den = g.add_scalar(c_den, cfg.c2());
    let num = g.mul(l_num, c_num)?;
    let den = g.mul(l_den, c_den)?;
    let map = g.div(num, den)?;
    Ok(g.mean_per_sample(map))
}

/// SSIM term per sample under the configured sign convention.
pub fn loss_ssim_per_sample(g: &mut Graph, fused: Var, ir: Var, vis_y: Var, cfg: &LossConfig) -> Result<Var> {
    let a = ssim_per_sample(g, fused, ir, cfg)?;
    let b = ssim_per_sample(g, fused, vis_y, cfg)?;
    let s = g.add(a, b)?;
    Ok(match cfg.ssim_sign {
        SsimSign::Dissimilarity => {
            let neg = g.scale(s, -1.0);
            g.add_scalar(neg, 2.0)
        }
        SsimSign::Raw => s,
    })
}

/// SSIM of two planes.
pub fn ssim(x: &Plane, y: &Plane, cfg: &LossConfig) -> Result<f64> {
    x.expect_dims(y)?;
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.to_tensor()), g.constant(y.to_tensor()));
    let s = ssim_per_sample(&mut g, a, b, cfg)?;
    Ok(g.value(s).data()[0])
}

/// Scalar loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_grad: f64,
    pub l_reg: f64,
    pub l_ss: f64,
    pub l_c: f64,
    pub l_s: f64,
    pub l_f: f64,
    pub l_total: f64,
}

impl LossBundle {
    /// Compose the totals from the four components.
    pub fn compose(l_grad: f64, l_reg: f64, l_c: f64, l_s: f64, cfg: &LossConfig) -> Self {
        let l_ss = if cfg.use_saliency { l_grad + l_reg } else { 0.0 };
        let l_f = if cfg.use_ssim { l_c + cfg.lambda2 * l_s } else { l_c };
        LossBundle { l_grad, l_reg, l_ss, l_c, l_s, l_f, l_total: l_ss + l_f }
    }

    pub fn check_finite(&self) -> Result<()> {
        let named = [
            ("l_grad", self.l_grad),
            ("l_reg", self.l_reg),
            ("l_ss", self.l_ss),
            ("l_c", self.l_c),
            ("l_s", self.l_s),
            ("l_f", self.l_f),
            ("l_total", self.l_total),
        ];
        match named.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFiniteLoss(name)),
            None => Ok(()),
        }
    }
}

/// Graph handles of the batch-averaged loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub l_grad: Option<Var>,
    pub l_reg: Option<Var>,
    pub l_c: Var,
    pub l_s: Var,
    /// Saliency structure loss; drives the decoder and the residual branch.
    pub l_ss: Option<Var>,
    /// Fusion loss.
    pub l_f: Var,
    pub l_total: Var,
}

/// Result of [`loss_total`].
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub vars: LossVars,
    pub bundle: LossBundle,
}

/// Inputs of [`loss_total`], all `N×1×H×W`.
#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a> {
    pub fused: Var,
    pub aux_residual: Option<Var>,
    pub ir: Var,
    pub vis_y: Var,
    pub masks: &'a BatchMasks,
}

/// Every term, its weighted composition, and finiteness checks.
pub fn loss_total(g: &mut Graph, inputs: LossInputs<'_>, cfg: &LossConfig) -> Result<LossOutput> {
    let LossInputs { fused, aux_residual, ir, vis_y, masks } = inputs;
    let texture = g.constant(masks.texture.clone());
    let thermal = g.constant(masks.thermal.clone());
    let w = g.constant(masks.weight.clone());
    let w_bar = g.constant(masks.weight_complement.clone());

    let (l_grad, l_reg) = match (cfg.use_saliency, aux_residual) {
        (true, Some(m)) => {
            let a = loss_grad_per_sample(g, m, ir, texture, cfg.lambda1)?;
            let b = loss_reg_per_sample(g, m, thermal)?;
            (Some(g.mean_all(a)), Some(g.mean_all(b)))
        }
        _ => (None, None),
    };
    let c = loss_contrastive_per_sample(g, fused, ir, vis_y, w, w_bar, cfg.eps, cfg.contrast)?;
    let l_c = g.mean_all(c);
    let s = loss_ssim_per_sample(g, fused, ir, vis_y, cfg)?;
    let l_s = g.mean_all(s);

    let l_ss = match (l_grad, l_reg) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        _ => None,
    };
    let l_f = if cfg.use_ssim {
        let ws = g.scale(l_s, cfg.lambda2);
        g.add(l_c, ws)?
    } else {
        l_c
    };
    let l_total = match l_ss {
        Some(ss) => g.add(ss, l_f)?,
        None => l_f,
    };

    let scalar = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0]);
    let bundle = LossBundle {
        l_grad: scalar(g, l_grad),
        l_reg: scalar(g, l_reg),
        l_ss: scalar(g, l_ss),
        l_c: scalar(g, Some(l_c)),
        l_s: scalar(g, Some(l_s)),
        l_f: scalar(g, Some(l_f)),
        l_total: scalar(g, Some(l_total)),
    };
    bundle.check_finite()?;
    Ok(LossOutput { vars: LossVars { l_grad, l_reg, l_c, l_s, l_ss, l_f, l_total }, bundle })
}
