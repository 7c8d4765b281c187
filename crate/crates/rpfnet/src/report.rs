//! CSV, JSON and plot writers. Every file is written atomically.

use std::path::Path;

use anyhow::Result;
use image::{ImageBuffer, Rgb as RgbPixel};
use rpfnet_core::metrics::MetricReport;
use serde::Serialize;

use crate::checkpoint::write_atomic;
use crate::dataset::Reject;

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    write_atomic(path, &w.into_inner()?)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    write_csv(path, &["name", "reason"], rejects.iter().map(|r| vec![r.name.clone(), r.reason.clone()]))
}

/// Metric names keyed for JSON.
#[derive(Clone, Debug, Serialize)]
pub struct NamedMetrics {
    pub name: String,
    #[serde(rename = "EN")]
    pub en: f64,
    #[serde(rename = "SF")]
    pub sf: f64,
    #[serde(rename = "SD")]
    pub sd: f64,
    #[serde(rename = "CC")]
    pub cc: f64,
    #[serde(rename = "SCD")]
    pub scd: f64,
    #[serde(rename = "VIF")]
    pub vif: f64,
}

impl NamedMetrics {
    pub fn new(name: &str, m: &MetricReport) -> Self {
        NamedMetrics { name: name.to_string(), en: m.en, sf: m.sf, sd: m.sd, cc: m.cc, scd: m.scd, vif: m.vif }
    }
}

/// `name, EN, SF, SD, CC, SCD, VIF` rows.
pub fn write_metrics_csv(path: &Path, first: &str, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut header = vec![first];
    header.extend(MetricReport::NAMES);
    write_csv(
        path,
        &header,
        rows.iter().map(|(n, m)| std::iter::once(n.clone()).chain(m.values().map(num)).collect()),
    )
}

const PLOT_W: u32 = 640;
const PLOT_H: u32 = 400;
const MARGIN: u32 = 40;

fn line(img: &mut ImageBuffer<RgbPixel<u8>, Vec<u8>>, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..PLOT_W as i64).contains(&x) && (0..PLOT_H as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, RgbPixel(c));
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Render `log10(1 + p)` of several radial profiles on shared axes.
pub fn render_profiles(series: &[(&[f64], [u8; 3])]) -> ImageBuffer<RgbPixel<u8>, Vec<u8>> {
    let mut img = ImageBuffer::from_pixel(PLOT_W, PLOT_H, RgbPixel([255, 255, 255]));
    let (x0, y0, x1, y1) = (MARGIN as i64, (PLOT_H - MARGIN) as i64, (PLOT_W - MARGIN) as i64, MARGIN as i64);
    line(&mut img, (x0, y0), (x1, y0), [0, 0, 0]);
    line(&mut img, (x0, y0), (x0, y1), [0, 0, 0]);
    let logs: Vec<Vec<f64>> = series.iter().map(|(s, _)| s.iter().map(|v| (1.0 + v.max(0.0)).log10()).collect()).collect();
    let top = logs.iter().flatten().cloned().fold(0.0_f64, f64::max).max(1e-12);
    let len = logs.iter().map(Vec::len).max().unwrap_or(0);
    if len < 2 {
        return img;
    }
    for (vals, (_, color)) in logs.iter().zip(series) {
        let pt = |i: usize| {
            let x = x0 + ((x1 - x0) as f64 * i as f64 / (len - 1) as f64).round() as i64;
            let y = y0 - ((y0 - y1) as f64 * vals[i] / top).round() as i64;
            (x, y)
        };
        for i in 1..vals.len() {
            line(&mut img, pt(i - 1), pt(i), *color);
        }
    }
    img
}

pub fn write_png(path: &Path, img: &ImageBuffer<RgbPixel<u8>, Vec<u8>>) -> Result<()> {
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)?;
    write_atomic(path, bytes.get_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_through_text() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5, 12345.678] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn profile_plot_draws_each_series() {
        let a = [100.0, 10.0, 1.0, 0.0];
        let img = render_profiles(&[(&a, [255, 0, 0])]);
        assert!(img.pixels().any(|p| p.0 == [255, 0, 0]));
        assert_eq!(img.dimensions(), (PLOT_W, PLOT_H));
    }

    #[test]
    fn csv_rows_follow_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, "image", &[("a.png".into(), MetricReport::default())]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "image,EN,SF,SD,CC,SCD,VIF\na.png,0.0,0.0,0.0,0.0,0.0,0.0\n");
    }
}
