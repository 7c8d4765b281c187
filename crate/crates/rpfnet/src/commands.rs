//! The five operator commands. Inputs are loaded and checked before the
//! output directory is touched, so a failed precondition leaves nothing
//! behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use rpfnet_core::imaging::Plane;
use rpfnet_core::metrics::{psd_analyze, psd_fidelity, ror_rank, MetricReport};
use rpfnet_core::network::Model;
use rpfnet_core::training::{split_croppable, validate, StepRecord, Trainer};
use serde::Serialize;

use crate::ablation::{self, BASELINE};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_split, Reject, Sample, Split};
use crate::io::{gray_buffer, load_gray, rgb_buffer};
use crate::report::{self, num, write_csv, write_json, write_metrics_csv, NamedMetrics};

pub const CONFIG_ECHO: &str = "config.toml";
pub const LOSS_CSV: &str = "loss.csv";
pub const LOSS_COLUMNS: [&str; 6] = ["step", "l_grad", "l_reg", "l_c", "l_s", "l_total"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Fuse,
    Eval,
    Psd,
    Ablate,
}

#[derive(Clone, Debug)]
pub struct CommandSpec {
    pub command: Command,
    pub config: RunConfig,
    pub out: PathBuf,
}

pub fn run(spec: &CommandSpec) -> Result<()> {
    match spec.command {
        Command::Train => cmd_train(&spec.config, &spec.out).map(|_| ()),
        Command::Fuse => cmd_fuse(&spec.config, &spec.out),
        Command::Eval => cmd_eval(&spec.config, &spec.out),
        Command::Psd => cmd_psd(&spec.config, &spec.out),
        Command::Ablate => cmd_ablate(&spec.config, &spec.out),
    }
}

/// Create the output directory and echo the resolved configuration into it.
fn open_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    write_atomic(&out.join(CONFIG_ECHO), cfg.to_toml()?.as_bytes())
}

fn loss_row(r: &StepRecord) -> Vec<String> {
    let l = &r.losses;
    vec![r.step.to_string(), num(l.l_grad), num(l.l_reg), num(l.l_c), num(l.l_s), num(l.l_total)]
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

struct Training {
    trainer: Trainer,
    last_checkpoint: Option<PathBuf>,
}

/// Train into an already-open output directory.
fn train_into(cfg: &RunConfig, data: &[Sample], out: &Path) -> Result<Training> {
    let tc = cfg.train_config();
    let pairs: Vec<_> = data.iter().map(|s| s.pair.clone()).collect();
    let mut trainer = match &cfg.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let state = ck.trainer.clone().context("checkpoint holds no optimizer state to resume from")?;
            Trainer::resume(tc, ck.model()?, state)?
        }
        None => Trainer::new(tc)?,
    };
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    let mut log = csv::Writer::from_path(out.join(LOSS_CSV))?;
    log.write_record(LOSS_COLUMNS)?;
    let mut last_checkpoint = None;
    while trainer.epoch() < cfg.epochs {
        let mut rows = Vec::new();
        let res = trainer.run_epoch(&pairs, |r| rows.push(loss_row(r)));
        for r in &rows {
            log.write_record(r)?;
        }
        log.flush()?;
        if let Err(e) = res {
            let kept = last_checkpoint.as_ref().map_or("none".to_string(), |p: &PathBuf| p.display().to_string());
            bail!("training aborted in epoch {}: {e}; last good checkpoint: {kept}", trainer.epoch() + 1);
        }
        let epoch = trainer.epoch();
        let total = rows.last().map_or(String::new(), |r| r[5].clone());
        eprintln!("epoch {epoch}/{}  steps {}  l_total {total}", cfg.epochs, trainer.steps_done());
        if epoch % cfg.checkpoint_every.max(1) == 0 || epoch == cfg.epochs {
            let path = ck_dir.join(checkpoint_name(epoch));
            Checkpoint::with_training(&trainer.model, &trainer.config, trainer.state()).save(&path)?;
            last_checkpoint = Some(path);
        }
    }
    Ok(Training { trainer, last_checkpoint })
}

fn usable_training_set(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Reject>)> {
    let (samples, mut rejects) = load_split(cfg, Split::Train)?.expect("training split is always configured");
    let (names, pairs): (Vec<_>, Vec<_>) = samples.into_iter().map(|s| (s.name, s.pair)).unzip();
    let (keep, too_small) = split_croppable(pairs, cfg.crop);
    let dropped: Vec<usize> = too_small.iter().map(|(i, _)| *i).collect();
    rejects.extend(too_small.into_iter().map(|(i, reason)| Reject { name: names[i].clone(), reason }));
    let kept_names = names.into_iter().enumerate().filter(|(i, _)| !dropped.contains(i)).map(|(_, n)| n);
    let samples: Vec<Sample> = kept_names.zip(keep).map(|(name, pair)| Sample { name, pair }).collect();
    ensure!(!samples.is_empty(), "no usable training pairs ({} rejected)", rejects.len());
    Ok((samples, rejects))
}

fn validation_rows(model: &Model, val: &[Sample]) -> Result<(Vec<(String, MetricReport)>, MetricReport)> {
    let pairs: Vec<_> = val.iter().map(|s| s.pair.clone()).collect();
    let (per, mean) = validate(model, &pairs)?;
    Ok((val.iter().map(|s| s.name.clone()).zip(per).collect(), mean))
}

#[derive(Serialize)]
struct MetricSummary {
    count: usize,
    mean: NamedMetrics,
    images: Vec<NamedMetrics>,
}

fn write_metric_reports(out: &Path, stem: &str, rows: &[(String, MetricReport)], mean: &MetricReport) -> Result<()> {
    write_metrics_csv(&out.join(format!("{stem}.csv")), "image", rows)?;
    let summary = MetricSummary {
        count: rows.len(),
        mean: NamedMetrics::new("mean", mean),
        images: rows.iter().map(|(n, m)| NamedMetrics::new(n, m)).collect(),
    };
    write_json(&out.join(format!("{stem}.json")), &summary)
}

/// Train, writing per-epoch checkpoints, the loss log, the config echo, the
/// rejects report and (when a validation split exists) validation metrics.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Trainer> {
    let (data, rejects) = usable_training_set(cfg)?;
    let val = load_split(cfg, Split::Val)?;
    open_out(out, cfg)?;
    report::write_rejects(&out.join("rejects.csv"), &rejects)?;
    let run = train_into(cfg, &data, out)?;
    if let Some((val, _)) = val.filter(|(v, _)| !v.is_empty()) {
        let (rows, mean) = validation_rows(&run.trainer.model, &val)?;
        write_metric_reports(out, "val_metrics", &rows, &mean)?;
    }
    if let Some(p) = &run.last_checkpoint {
        eprintln!("final checkpoint {}", p.display());
    }
    Ok(run.trainer)
}

fn load_model(cfg: &RunConfig) -> Result<Model> {
    let path = cfg.checkpoint.as_ref().context("`checkpoint` must be set")?;
    Checkpoint::load(path)?.model()
}

fn test_samples(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Reject>)> {
    let (samples, rejects) = load_split(cfg, Split::Test)?.expect("test split is always configured");
    ensure!(!samples.is_empty(), "no readable input pairs ({} rejected)", rejects.len());
    Ok((samples, rejects))
}

fn output_name(input: &str) -> String {
    let stem = Path::new(input).file_stem().map_or(input.into(), |s| s.to_string_lossy().into_owned());
    format!("{stem}.png")
}

fn png_bytes<P: image::PixelWithColorType>(img: &image::ImageBuffer<P, Vec<P::Subpixel>>) -> Result<Vec<u8>>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)?;
    Ok(bytes.into_inner())
}

/// Fuse every input pair with the checkpoint's model. Outputs are PNGs named
/// after the inputs: RGB normally, single-channel in grayscale mode.
pub fn cmd_fuse(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg)?;
    let (samples, rejects) = test_samples(cfg)?;
    let encoded: Vec<(String, Vec<u8>)> = samples
        .par_iter()
        .map(|s| {
            let fused = model.fuse_pair(&s.pair)?;
            let bytes = if cfg.grayscale { png_bytes(&gray_buffer(&fused.fused_y))? } else { png_bytes(&rgb_buffer(&fused.fused_rgb))? };
            Ok((output_name(&s.name), bytes))
        })
        .collect::<Result<_>>()?;
    open_out(out, cfg)?;
    report::write_rejects(&out.join("rejects.csv"), &rejects)?;
    for (name, bytes) in encoded {
        write_atomic(&out.join(name), &bytes)?;
    }
    Ok(())
}

/// Fused luma per sample: from `fused_dir` when set, otherwise from the
/// checkpoint's model.
fn fused_planes(cfg: &RunConfig, samples: &[Sample]) -> Result<Vec<Plane>> {
    match &cfg.fused_dir {
        Some(dir) => samples
            .par_iter()
            .map(|s| {
                let (p, _) = load_gray(&dir.join(output_name(&s.name)))?;
                s.pair.ir.expect_dims(&p).with_context(|| format!("fused image for {}", s.name))?;
                Ok(p)
            })
            .collect(),
        None => {
            let model = load_model(cfg)?;
            samples.par_iter().map(|s| Ok(model.fuse_pair(&s.pair)?.fused_y)).collect()
        }
    }
}

/// Per-image CSV and aggregate JSON of the six fusion metrics.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (samples, rejects) = test_samples(cfg)?;
    let fused = fused_planes(cfg, &samples)?;
    let per: Vec<MetricReport> = samples
        .par_iter()
        .zip(&fused)
        .map(|(s, f)| Ok(MetricReport::compute(f, &s.pair.ir, &s.pair.vis.y)?))
        .collect::<Result<_>>()?;
    let mean = MetricReport::mean(&per)?;
    open_out(out, cfg)?;
    report::write_rejects(&out.join("rejects.csv"), &rejects)?;
    let rows: Vec<_> = samples.iter().map(|s| s.name.clone()).zip(per).collect();
    write_metric_reports(out, "metrics", &rows, &mean)
}

#[derive(Serialize)]
struct PsdImage {
    name: String,
    spectral_entropy_fused: f64,
    spectral_entropy_ir: f64,
    spectral_entropy_vis: f64,
    ir_fidelity: f64,
    vis_fidelity: f64,
}

#[derive(Serialize)]
struct PsdSummary {
    plot: &'static str,
    mean_ir_fidelity: f64,
    mean_vis_fidelity: f64,
    mean_spectral_entropy_fused: f64,
    images: Vec<PsdImage>,
}

/// Mean over images at each radius that at least one image reaches.
fn mean_profile(profiles: &[&[f64]]) -> Vec<f64> {
    let len = profiles.iter().map(|p| p.len()).max().unwrap_or(0);
    (0..len)
        .map(|r| {
            let vals: Vec<f64> = profiles.iter().filter_map(|p| p.get(r).copied()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

/// Radial PSD profiles (CSV), spectral entropy and fidelity (JSON) and a
/// profile plot (PNG) for fused, infrared and visible images.
pub fn cmd_psd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (samples, rejects) = test_samples(cfg)?;
    let fused = fused_planes(cfg, &samples)?;
    let analysed: Vec<_> = samples
        .par_iter()
        .zip(&fused)
        .map(|(s, f)| {
            let (ir_fid, vis_fid) = psd_fidelity(f, &s.pair.ir, &s.pair.vis.y)?;
            Ok((psd_analyze(f), psd_analyze(&s.pair.ir), psd_analyze(&s.pair.vis.y), ir_fid, vis_fid))
        })
        .collect::<Result<_>>()?;
    open_out(out, cfg)?;
    report::write_rejects(&out.join("rejects.csv"), &rejects)?;

    let mut rows = Vec::new();
    let mut images = Vec::new();
    for (s, (f, i, v, ir_fid, vis_fid)) in samples.iter().zip(&analysed) {
        for r in 0..f.radial_profile.len() {
            rows.push(vec![
                s.name.clone(),
                r.to_string(),
                num(f.radial_profile[r]),
                num(i.radial_profile[r]),
                num(v.radial_profile[r]),
            ]);
        }
        images.push(PsdImage {
            name: s.name.clone(),
            spectral_entropy_fused: f.spectral_entropy,
            spectral_entropy_ir: i.spectral_entropy,
            spectral_entropy_vis: v.spectral_entropy,
            ir_fidelity: *ir_fid,
            vis_fidelity: *vis_fid,
        });
    }
    write_csv(&out.join("psd.csv"), &["image", "radius", "fused", "ir", "vis"], rows)?;

    let k = images.len() as f64;
    let summary = PsdSummary {
        plot: "psd.png: log10(1 + mean radial power) against radius; black fused, red infrared, blue visible",
        mean_ir_fidelity: images.iter().map(|i| i.ir_fidelity).sum::<f64>() / k,
        mean_vis_fidelity: images.iter().map(|i| i.vis_fidelity).sum::<f64>() / k,
        mean_spectral_entropy_fused: images.iter().map(|i| i.spectral_entropy_fused).sum::<f64>() / k,
        images,
    };
    write_json(&out.join("psd.json"), &summary)?;

    let profile = |pick: fn(&(_, _, _, f64, f64)) -> &rpfnet_core::metrics::PsdReport| {
        mean_profile(&analysed.iter().map(|a| pick(a).radial_profile.as_slice()).collect::<Vec<_>>())
    };
    let (pf, pi, pv) = (profile(|a| &a.0), profile(|a| &a.1), profile(|a| &a.2));
    let plot = report::render_profiles(&[(&pi, [200, 30, 30]), (&pv, [30, 60, 200]), (&pf, [0, 0, 0])]);
    report::write_png(&out.join("psd.png"), &plot)
}

#[derive(Serialize)]
struct AblationRow {
    #[serde(flatten)]
    metrics: NamedMetrics,
    #[serde(rename = "RoR")]
    ror: f64,
}

/// Train the baseline and each listed case from scratch, evaluate all of
/// them on the validation split (the training split when none is
/// configured) and write the metric grid with rank-of-ranks.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let cases = ablation::parse_cases(&cfg.ablate_cases)?;
    let (data, rejects) = usable_training_set(cfg)?;
    let val = match load_split(cfg, Split::Val)? {
        Some((v, _)) if !v.is_empty() => v,
        _ => data.clone(),
    };
    open_out(out, cfg)?;
    report::write_rejects(&out.join("rejects.csv"), &rejects)?;

    let mut grid: Vec<(String, MetricReport)> = Vec::new();
    for name in std::iter::once(BASELINE).chain(cases) {
        let case_cfg = ablation::apply(cfg, name)?;
        let dir = out.join("cases").join(name);
        open_out(&dir, &case_cfg)?;
        eprintln!("ablation case {name}");
        let run = train_into(&case_cfg, &data, &dir)?;
        let (rows, mean) = validation_rows(&run.trainer.model, &val)?;
        write_metric_reports(&dir, "val_metrics", &rows, &mean)?;
        grid.push((name.to_string(), mean));
    }

    let ror = if grid.len() >= 2 {
        let table: Vec<Vec<f64>> = grid.iter().map(|(_, m)| m.values().to_vec()).collect();
        ror_rank(&table, &[true; 6])?
    } else {
        vec![1.0]
    };
    let mut header = vec!["case"];
    header.extend(MetricReport::NAMES);
    header.push("RoR");
    write_csv(
        &out.join("ablation.csv"),
        &header,
        grid.iter().zip(&ror).map(|((n, m), r)| {
            let mut row = vec![n.clone()];
            row.extend(m.values().map(num));
            row.push(num(*r));
            row
        }),
    )?;
    let rows: Vec<AblationRow> =
        grid.iter().zip(&ror).map(|((n, m), r)| AblationRow { metrics: NamedMetrics::new(n, m), ror: *r }).collect();
    write_json(&out.join("ablation.json"), &rows)
}
