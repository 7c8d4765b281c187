//! Pairing of infrared and visible directories, and loading of pairs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rpfnet_core::imaging::SourcePair;
use rpfnet_core::synthetic::synthetic_dataset;
use serde::Serialize;

use crate::config::RunConfig;
use crate::io::load_pair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ManifestPair {
    pub name: String,
    pub ir: PathBuf,
    pub vis: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub name: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub pairs: Vec<ManifestPair>,
    pub rejects: Vec<Reject>,
}

fn file_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list dataset directory {}", dir.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Pair same-named files of two directories in lexicographic order. Names
/// present on one side only are rejected, not fatal.
pub fn ingest(dir_ir: &Path, dir_vis: &Path, split: Split) -> Result<DatasetManifest> {
    let ir = file_names(dir_ir)?;
    let vis = file_names(dir_vis)?;
    let mut pairs = Vec::new();
    let mut rejects = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < ir.len() || j < vis.len() {
        match (ir.get(i), vis.get(j)) {
            (Some(a), Some(b)) if a == b => {
                pairs.push(ManifestPair { name: a.clone(), ir: dir_ir.join(a), vis: dir_vis.join(b) });
                i += 1;
                j += 1;
            }
            (Some(a), b) if b.is_none_or(|b| a < b) => {
                rejects.push(Reject { name: a.clone(), reason: "no visible counterpart".into() });
                i += 1;
            }
            (_, Some(b)) => {
                rejects.push(Reject { name: b.clone(), reason: "no infrared counterpart".into() });
                j += 1;
            }
            _ => unreachable!(),
        }
    }
    if pairs.is_empty() {
        eprintln!("warning: no image pairs in {} and {}", dir_ir.display(), dir_vis.display());
    }
    Ok(DatasetManifest { split, pairs, rejects })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub pair: SourcePair,
}

/// Open every manifest pair. Unreadable pairs and pairs of unequal size are
/// appended to the manifest's rejects.
pub fn load_manifest(manifest: &mut DatasetManifest, grayscale: bool) -> Vec<Sample> {
    let mut out = Vec::with_capacity(manifest.pairs.len());
    for p in &manifest.pairs {
        match load_pair(&p.ir, &p.vis, grayscale) {
            Ok(pair) => out.push(Sample { name: p.name.clone(), pair }),
            Err(e) => manifest.rejects.push(Reject { name: p.name.clone(), reason: format!("{e:#}") }),
        }
    }
    out
}

fn synthetic(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    synthetic_dataset(count, size, size, seed)
        .into_iter()
        .enumerate()
        .map(|(i, pair)| Sample { name: format!("synthetic_{i:04}.png"), pair })
        .collect()
}

/// Salt separating generated validation pairs from training pairs.
const VAL_SALT: u64 = 0x7a11_da7a;

/// The samples a command reads, with the rejects report. `None` when the
/// split is not configured (only possible for validation).
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Option<(Vec<Sample>, Vec<Reject>)>> {
    if cfg.synthetic_pairs > 0 {
        let samples = match split {
            Split::Val => synthetic(cfg.synthetic_val_pairs, cfg.synthetic_size, cfg.seed ^ VAL_SALT),
            _ => synthetic(cfg.synthetic_pairs, cfg.synthetic_size, cfg.seed),
        };
        return Ok(Some((samples, Vec::new())));
    }
    let (ir, vis) = match split {
        Split::Val => (&cfg.val_ir_dir, &cfg.val_vis_dir),
        _ => (&cfg.ir_dir, &cfg.vis_dir),
    };
    let (ir, vis) = match (ir, vis) {
        (Some(a), Some(b)) => (a, b),
        (None, None) if split == Split::Val => return Ok(None),
        _ => bail!("both infrared and visible directories must be set (or synthetic_pairs > 0)"),
    };
    for d in [ir, vis] {
        if !d.is_dir() {
            bail!("dataset directory {} does not exist", d.display());
        }
    }
    let mut manifest = ingest(ir, vis, split)?;
    let samples = load_manifest(&mut manifest, cfg.grayscale);
    Ok(Some((samples, manifest.rejects)))
}
