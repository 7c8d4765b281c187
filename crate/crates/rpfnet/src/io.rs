//! PNG/JPEG decoding into unit-range planes and PNG encoding of results.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, ImageBuffer, Luma, Rgb as RgbPixel};
use rpfnet_core::imaging::{Plane, Rgb, SourcePair};

/// Bit depth of the source samples, before scaling to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Eight,
    Sixteen,
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).with_context(|| format!("cannot read image {}", path.display()))
}

fn depth_of(img: &DynamicImage) -> Depth {
    match img.color().bytes_per_pixel() / img.color().channel_count() {
        1 => Depth::Eight,
        _ => Depth::Sixteen,
    }
}

fn plane_from(w: u32, h: u32, samples: impl Iterator<Item = f64>) -> Result<Plane> {
    Ok(Plane::new(h as usize, w as usize, samples.collect())?)
}

/// Single-channel view of an image. Colour inputs are reduced to BT.601
/// luma.
pub fn load_gray(path: &Path) -> Result<(Plane, Depth)> {
    let img = open(path)?;
    let depth = depth_of(&img);
    let (w, h) = (img.width(), img.height());
    let plane = match depth {
        Depth::Eight if img.color().channel_count() <= 2 => {
            plane_from(w, h, img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0))?
        }
        Depth::Sixteen if img.color().channel_count() <= 2 => {
            plane_from(w, h, img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0))?
        }
        _ => {
            let rgb = rgb_of(&img, depth)?;
            let ycc = rpfnet_core::imaging::rgb_to_ycbcr(&rgb)?;
            ycc.y
        }
    };
    Ok((plane, depth))
}

fn rgb_of(img: &DynamicImage, depth: Depth) -> Result<Rgb> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<f64> = match depth {
        Depth::Eight => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        Depth::Sixteen => img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    };
    let channel = |c: usize| Plane::new(h, w, raw.iter().skip(c).step_by(3).copied().collect());
    Ok(Rgb::new(channel(0)?, channel(1)?, channel(2)?)?)
}

/// Three-channel view of an image; grayscale inputs are replicated.
pub fn load_rgb(path: &Path) -> Result<(Rgb, Depth)> {
    let img = open(path)?;
    let depth = depth_of(&img);
    Ok((rgb_of(&img, depth)?, depth))
}

/// Load a registered pair. In grayscale mode both inputs are read as single
/// planes, otherwise the visible image keeps its colour.
pub fn load_pair(ir: &Path, vis: &Path, grayscale: bool) -> Result<SourcePair> {
    let (ir_plane, _) = load_gray(ir)?;
    let pair = if grayscale {
        let (other, _) = load_gray(vis)?;
        SourcePair::grayscale(ir_plane, other)
    } else {
        let (rgb, _) = load_rgb(vis)?;
        SourcePair::new(ir_plane, rgb)
    };
    pair.with_context(|| format!("pair {} / {}", ir.display(), vis.display()))
}

/// Unit-range value to an 8-bit sample, rounding half away from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn gray_buffer(p: &Plane) -> ImageBuffer<Luma<u8>, Vec<u8>> {
    let (h, w) = p.dims();
    ImageBuffer::from_raw(w as u32, h as u32, p.data().iter().map(|&v| quantize(v)).collect()).expect("plane length")
}

pub fn rgb_buffer(img: &Rgb) -> ImageBuffer<RgbPixel<u8>, Vec<u8>> {
    let (h, w) = img.dims();
    let mut raw = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        raw.extend([img.r.data()[i], img.g.data()[i], img.b.data()[i]].map(quantize));
    }
    ImageBuffer::from_raw(w as u32, h as u32, raw).expect("rgb length")
}

fn check_png(path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => Ok(()),
        _ => bail!("output {} must have a .png extension", path.display()),
    }
}

pub fn save_gray(path: &Path, p: &Plane) -> Result<()> {
    check_png(path)?;
    gray_buffer(p).save(path).with_context(|| format!("cannot write {}", path.display()))
}

pub fn save_rgb(path: &Path, img: &Rgb) -> Result<()> {
    check_png(path)?;
    rgb_buffer(img).save(path).with_context(|| format!("cannot write {}", path.display()))
}
