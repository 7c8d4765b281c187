//! Procedural infrared/visible pairs for smoke tests: warm blobs on a cool
//! background in the infrared, oriented textures and soft colour in the
//! visible image. The blobs are faint in the visible luma so the residual
//! map carries real structure.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::{Plane, Rgb, SourcePair};
use crate::math;

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    heat: f64,
}

fn blob_field(blobs: &[Blob], y: f64, x: f64) -> f64 {
    blobs
        .iter()
        .map(|b| {
            let d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
            b.heat * math::exp(-d2 / (2.0 * b.radius * b.radius))
        })
        .sum()
}

/// One seeded `h×w` pair.
pub fn synthetic_pair(h: usize, w: usize, seed: u64) -> SourcePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_blobs = rng.random_range(1..=3);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            cy: rng.random_range(0.15..0.85) * h as f64,
            cx: rng.random_range(0.15..0.85) * w as f64,
            radius: rng.random_range(0.05..0.12) * h.min(w) as f64,
            heat: rng.random_range(0.5..0.75),
        })
        .collect();
    let base_ir = rng.random_range(0.1..0.25);
    let (fy, fx) = (rng.random_range(2.0..6.0), rng.random_range(2.0..6.0));
    let phase = rng.random_range(0.0..2.0 * PI);
    let tint: [f64; 3] = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)];
    let noise: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();

    let ir = Plane::from_fn(h, w, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let gradient = 0.08 * yf / h as f64;
        (base_ir + gradient + blob_field(&blobs, yf, xf) + 0.02 * noise[y * w + x]).clamp(0.0, 1.0)
    });
    let luma = Plane::from_fn(h, w, |y, x| {
        let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
        let stripes = math::sin(2.0 * PI * (fy * u + fx * v) + phase);
        let checker = if ((y / 8) + (x / 8)) % 2 == 0 { 0.08 } else { -0.08 };
        let faint = 0.15 * blob_field(&blobs, y as f64, x as f64);
        (0.45 + 0.25 * stripes + checker + faint + 0.03 * noise[h * w + y * w + x]).clamp(0.0, 1.0)
    });
    let channel = |k: usize| luma.map(|v| (v * tint[k] + (1.0 - tint[k]) * 0.5).clamp(0.0, 1.0));
    let rgb = Rgb { r: channel(0), g: channel(1), b: channel(2) };
    SourcePair::new(ir, rgb).expect("planes share dimensions")
}

/// `count` pairs with per-pair seeds derived from `seed`.
pub fn synthetic_dataset(count: usize, h: usize, w: usize, seed: u64) -> Vec<SourcePair> {
    (0..count as u64).map(|i| synthetic_pair(h, w, seed.wrapping_mul(1_000_003).wrapping_add(i))).collect()
}
