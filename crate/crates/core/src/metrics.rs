//! Fusion quality metrics, rank-of-ranks aggregation and spectral analysis.
//!
//! Inputs are unit-range planes. SF, SD, VIF and the PSD work on the 0–255
//! intensity scale.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::imaging::Plane;
use crate::losses::gaussian_taps;
use crate::math;
use crate::ops::{filter1d_replicate, Axis};
use crate::tensor::Tensor;

const SCALE: f64 = 255.0;

/// Shannon entropy in bits of the 256-bin histogram.
pub fn entropy(img: &Plane) -> f64 {
    let mut hist = [0usize; 256];
    for &v in img.data() {
        let bin = math::floor(v.clamp(0.0, 1.0) * SCALE + 0.5) as usize;
        hist[bin.min(255)] += 1;
    }
    let total = img.len() as f64;
    let s: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * math::log2(p)
        })
        .sum();
    0.0 - s
}

/// `√(RF² + CF²)` where `RF²` and `CF²` are the summed squared horizontal and
/// vertical neighbour differences divided by `H·W`.
pub fn spatial_frequency(img: &Plane) -> f64 {
    let (h, w) = img.dims();
    if h * w == 0 {
        return 0.0;
    }
    let (mut rf, mut cf) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = img.at(y, x) * SCALE;
            if x > 0 {
                let d = v - img.at(y, x - 1) * SCALE;
                rf += d * d;
            }
            if y > 0 {
                let d = v - img.at(y - 1, x) * SCALE;
                cf += d * d;
            }
        }
    }
    let p = (h * w) as f64;
    math::sqrt(rf / p + cf / p)
}

/// Population standard deviation on the 0–255 scale.
pub fn std_dev(img: &Plane) -> f64 {
    img.std() * SCALE
}

/// Pearson correlation; 0 when either operand has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (math::mean(a), math::mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / math::sqrt(saa * sbb)
}

/// `(r(F, IR) + r(F, VIS_Y)) / 2`.
pub fn correlation_cc(fused: &Plane, ir: &Plane, vis_y: &Plane) -> Result<f64> {
    fused.expect_dims(ir)?;
    fused.expect_dims(vis_y)?;
    Ok((pearson(fused.data(), ir.data()) + pearson(fused.data(), vis_y.data())) / 2.0)
}

/// Sum of the correlations of differences: `r(F − VIS_Y, IR) + r(F − IR, VIS_Y)`.
pub fn scd(fused: &Plane, ir: &Plane, vis_y: &Plane) -> Result<f64> {
    let d1 = fused.zip_map(vis_y, |a, b| a - b)?;
    let d2 = fused.zip_map(ir, |a, b| a - b)?;
    Ok(pearson(d1.data(), ir.data()) + pearson(d2.data(), vis_y.data()))
}

/// Number of scales of the pixel-domain VIF.
pub const VIF_SCALES: usize = 4;
/// Visual noise variance on the 0–255 scale.
pub const VIF_NOISE_VAR: f64 = 2.0;
const VIF_TINY: f64 = 1e-10;

fn gauss_same(t: &Tensor, taps: &[f64]) -> Tensor {
    filter1d_replicate(&filter1d_replicate(t, taps, Axis::Horizontal), taps, Axis::Vertical)
}

fn downsample(t: &Tensor) -> Tensor {
    let s = t.shape();
    let (h, w) = (s.h().div_ceil(2), s.w().div_ceil(2));
    Tensor::from_fn(crate::tensor::Shape::new(1, 1, h, w), |_, _, y, x| t.at(0, 0, 2 * y, 2 * x))
}

/// Pixel-domain visual information fidelity of `distorted` relative to
/// `reference`. Four scales with Gaussian windows of size `2^(5−s)+1` and
/// σ = size/5; filtering keeps the image size with replicate borders and
/// every coarser scale is the blurred previous scale subsampled by two.
pub fn vif(distorted: &Plane, reference: &Plane) -> Result<f64> {
    distorted.expect_dims(reference)?;
    let mut r = reference.map(|v| v * SCALE).to_tensor();
    let mut d = distorted.map(|v| v * SCALE).to_tensor();
    let (mut num, mut den) = (0.0, 0.0);
    for scale in 1..=VIF_SCALES {
        let n = (1usize << (5 - scale)) + 1;
        let taps = gaussian_taps(n, n as f64 / 5.0);
        if scale > 1 {
            r = downsample(&gauss_same(&r, &taps));
            d = downsample(&gauss_same(&d, &taps));
        }
        let mu1 = gauss_same(&r, &taps);
        let mu2 = gauss_same(&d, &taps);
        let rr = gauss_same(&r.zip_map(&r, |a, b| a * b)?, &taps);
        let dd = gauss_same(&d.zip_map(&d, |a, b| a * b)?, &taps);
        let rd = gauss_same(&r.zip_map(&d, |a, b| a * b)?, &taps);
        for i in 0..r.len() {
            let (m1, m2) = (mu1.data()[i], mu2.data()[i]);
            let mut s1 = (rr.data()[i] - m1 * m1).max(0.0);
            let s2 = (dd.data()[i] - m2 * m2).max(0.0);
            let s12 = rd.data()[i] - m1 * m2;
            let mut gain = s12 / (s1 + VIF_TINY);
            let mut sv = s2 - gain * s12;
            if s1 < VIF_TINY {
                gain = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < VIF_TINY {
                gain = 0.0;
                sv = 0.0;
            }
            if gain < 0.0 {
                sv = s2;
                gain = 0.0;
            }
            if sv <= VIF_TINY {
                sv = VIF_TINY;
            }
            num += math::log10(1.0 + gain * gain * s1 / (sv + VIF_NOISE_VAR));
            den += math::log10(1.0 + s1 / VIF_NOISE_VAR);
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// VIF of a fused image: the mean over both sources.
pub fn vif_fusion(fused: &Plane, ir: &Plane, vis_y: &Plane) -> Result<f64> {
    Ok((vif(fused, ir)? + vif(fused, vis_y)?) / 2.0)
}

/// The six fusion metrics of one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub en: f64,
    pub sf: f64,
    pub sd: f64,
    pub cc: f64,
    pub scd: f64,
    pub vif: f64,
}

impl MetricReport {
    pub const NAMES: [&'static str; 6] = ["EN", "SF", "SD", "CC", "SCD", "VIF"];

    pub fn compute(fused: &Plane, ir: &Plane, vis_y: &Plane) -> Result<Self> {
        Ok(MetricReport {
            en: entropy(fused),
            sf: spatial_frequency(fused),
            sd: std_dev(fused),
            cc: correlation_cc(fused, ir, vis_y)?,
            scd: scd(fused, ir, vis_y)?,
            vif: vif_fusion(fused, ir, vis_y)?,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.en, self.sf, self.sd, self.cc, self.scd, self.vif]
    }

    /// Arithmetic mean of per-image reports.
    pub fn mean(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Empty("metric aggregation"));
        }
        let mut acc = [0.0; 6];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let k = reports.len() as f64;
        let [en, sf, sd, cc, scd, vif] = acc.map(|v| v / k);
        Ok(MetricReport { en, sf, sd, cc, scd, vif })
    }
}

/// Fractional ranks (1 = first) with ties sharing their average rank.
pub fn average_ranks(values: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if higher_is_better {
            o.reverse()
        } else {
            o
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank of ranks. `table[method][metric]`; each metric is ranked with ties
/// averaged, methods are scored by their mean rank, and the mean ranks are
/// ranked again (lower mean is better).
pub fn ror_rank(table: &[Vec<f64>], higher_is_better: &[bool]) -> Result<Vec<f64>> {
    if table.len() < 2 {
        return Err(Error::RankInput("two methods"));
    }
    let metrics = higher_is_better.len();
    if metrics == 0 {
        return Err(Error::RankInput("one metric"));
    }
    for (mi, row) in table.iter().enumerate() {
        if row.len() != metrics {
            return Err(Error::DataLength { expected: metrics, got: row.len() });
        }
        if let Some(k) = row.iter().position(|v| v.is_nan()) {
            return Err(Error::NanMetric { method: mi, metric: k });
        }
    }
    let mut mean_rank = vec![0.0; table.len()];
    for (k, &hib) in higher_is_better.iter().enumerate() {
        let col: Vec<f64> = table.iter().map(|row| row[k]).collect();
        for (m, r) in average_ranks(&col, hib).into_iter().enumerate() {
            mean_rank[m] += r / metrics as f64;
        }
    }
    Ok(average_ranks(&mean_rank, false))
}

/// Power spectrum summary of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub height: usize,
    pub width: usize,
    /// `|FFT(img − mean)|² / (H·W)` on the 0–255 scale, row-major.
    pub psd2d: Vec<f64>,
    /// Mean power per integer frequency radius, from DC to the corner.
    pub radial_profile: Vec<f64>,
    /// Shannon entropy in bits of the normalized `psd2d`.
    pub spectral_entropy: f64,
}

/// Signed frequency index of FFT bin `k` of an `n`-point transform.
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Integer radius of bin `(ky, kx)`.
pub fn radius_bin(ky: usize, kx: usize, h: usize, w: usize) -> usize {
    let (fy, fx) = (signed_freq(ky, h), signed_freq(kx, w));
    math::floor(math::sqrt(fy * fy + fx * fx) + 0.5) as usize
}

pub fn psd_analyze(img: &Plane) -> PsdReport {
    let (h, w) = img.dims();
    let mu = img.mean();
    let p = (h * w) as f64;
    let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new((v - mu) * SCALE, 0.0)).collect();
    Fft2::new(h, w).forward(&mut buf);
    let psd2d: Vec<f64> = buf.iter().map(|c| c.norm_sqr() / p).collect();

    let rmax = radius_bin(h / 2, w / 2, h, w);
    let mut sums = vec![0.0; rmax + 1];
    let mut counts = vec![0usize; rmax + 1];
    for ky in 0..h {
        for kx in 0..w {
            let r = radius_bin(ky, kx, h, w);
            sums[r] += psd2d[ky * w + kx];
            counts[r] += 1;
        }
    }
    let radial_profile = sums.iter().zip(&counts).map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();

    let total: f64 = psd2d.iter().sum();
    let spectral_entropy = if total > 0.0 {
        psd2d
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| {
                let q = v / total;
                -q * math::log2(q)
            })
            .sum()
    } else {
        0.0
    };
    PsdReport { height: h, width: w, psd2d, radial_profile, spectral_entropy }
}

/// Correlation of `log(1 + radial profile)` between the fused image and
/// each source: `(ir_fidelity, vis_fidelity)`.
pub fn psd_fidelity(fused: &Plane, ir: &Plane, vis: &Plane) -> Result<(f64, f64)> {
    fused.expect_dims(ir)?;
    fused.expect_dims(vis)?;
    let logp = |p: &Plane| -> Vec<f64> { psd_analyze(p).radial_profile.iter().map(|&v| math::ln(1.0 + v)).collect() };
    let f = logp(fused);
    Ok((pearson(&f, &logp(ir)), pearson(&f, &logp(vis))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy(&Plane::filled(8, 8, 0.3)), 0.0);
        let half = Plane::from_fn(8, 8, |y, _| if y < 4 { 0.0 } else { 1.0 });
        assert!((entropy(&half) - 1.0).abs() < 1e-12);
        let ramp = Plane::from_fn(16, 16, |y, x| (y * 16 + x) as f64 / 255.0);
        assert!((entropy(&ramp) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn stripes_and_bernoulli_closed_forms() {
        let w = 10;
        let stripes = Plane::from_fn(6, w, |_, x| (x % 2) as f64);
        let expect = math::sqrt(255.0 * 255.0 * (w - 1) as f64 / w as f64);
        assert!((spatial_frequency(&stripes) - expect).abs() < 1e-9);
        assert!((std_dev(&stripes) - 127.5).abs() < 1e-9);
        let c = Plane::filled(5, 5, 0.4);
        assert_eq!(spatial_frequency(&c), 0.0);
        assert!(std_dev(&c).abs() < 1e-12);
    }

    #[test]
    fn pearson_zero_variance_is_zero() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]), 0.0);
        assert!((pearson(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0], true), vec![1.5, 4.0, 1.5, 3.0]);
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0], false), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn ror_rejects_nan_and_small_tables() {
        assert!(ror_rank(&[vec![1.0]], &[true]).is_err());
        assert_eq!(ror_rank(&[vec![1.0], vec![f64::NAN]], &[true]), Err(Error::NanMetric { method: 1, metric: 0 }));
        assert_eq!(ror_rank(&[vec![1.0], vec![2.0]], &[true]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn sinusoid_energy_in_two_bins() {
        let (h, w, k) = (16, 32, 5);
        let img = Plane::from_fn(h, w, |_, x| 0.5 + 0.4 * math::cos(2.0 * core::f64::consts::PI * (k * x) as f64 / w as f64));
        let r = psd_analyze(&img);
        let total: f64 = r.psd2d.iter().sum();
        let peak = r.psd2d[k] + r.psd2d[w - k];
        assert!(peak / total > 0.99);
        assert_eq!(r.radial_profile.len(), radius_bin(h / 2, w / 2, h, w) + 1);
    }

    #[test]
    fn fidelity_with_itself_is_one() {
        let a = Plane::from_fn(16, 16, |y, x| ((y * 5 + x * 3) % 7) as f64 / 7.0);
        let b = Plane::from_fn(16, 16, |y, x| ((y + x * x) % 5) as f64 / 5.0);
        let (fi, _) = psd_fidelity(&a, &a, &b).unwrap();
        assert!((fi - 1.0).abs() < 1e-12);
    }
}
