//! Flat TOML run configuration and `KEY=VALUE` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rpfnet_core::losses::{ContrastMode, LossConfig, SsimSign};
use rpfnet_core::network::{FdfmMode, ModelConfig};
use rpfnet_core::optim::{AdamConfig, StepDecay};
use rpfnet_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Every setting of every command, one key per field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Directory of infrared images. Paired with `vis_dir` by file name.
    pub ir_dir: Option<PathBuf>,
    pub vis_dir: Option<PathBuf>,
    /// Held-out pairs for validation metrics.
    pub val_ir_dir: Option<PathBuf>,
    pub val_vis_dir: Option<PathBuf>,
    /// When positive, use this many generated pairs instead of directories.
    pub synthetic_pairs: usize,
    pub synthetic_size: usize,
    /// Generated validation pairs when `synthetic_pairs` is positive.
    pub synthetic_val_pairs: usize,
    /// Treat both inputs as single-channel (medical-style pairs).
    pub grayscale: bool,
    /// Weights for `fuse`, `eval` and `psd`.
    pub checkpoint: Option<PathBuf>,
    /// Evaluate already-fused images from this directory instead of a checkpoint.
    pub fused_dir: Option<PathBuf>,

    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub crop: usize,
    pub epochs: usize,
    pub seed: u64,
    pub block_lss_backbone: bool,
    /// Write a checkpoint every this many epochs; the last epoch is always saved.
    pub checkpoint_every: usize,

    pub stages: usize,
    pub channels: usize,
    pub dilation_rates: Vec<usize>,
    pub reduction: usize,
    pub use_cpm: bool,
    pub use_residual_branch: bool,
    pub fdfm_mode: FdfmMode,

    pub lambda1: f64,
    pub lambda2: f64,
    pub loss_eps: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub ssim_range: f64,
    pub ssim_sign: SsimSign,
    pub contrast: ContrastMode,
    pub use_ssim: bool,
    pub use_saliency: bool,

    /// Ablation cases to run after the baseline.
    pub ablate_cases: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let (m, l) = (&t.model, &t.loss);
        RunConfig {
            ir_dir: None,
            vis_dir: None,
            val_ir_dir: None,
            val_vis_dir: None,
            synthetic_pairs: 0,
            synthetic_size: 64,
            synthetic_val_pairs: 2,
            grayscale: false,
            checkpoint: None,
            fused_dir: None,
            lr0: t.schedule.lr0,
            lr_decay: t.schedule.factor,
            lr_decay_every: t.schedule.every,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            adam_eps: t.adam.eps,
            batch: t.batch,
            crop: t.crop,
            epochs: t.epochs,
            seed: t.seed,
            block_lss_backbone: t.block_lss_backbone,
            checkpoint_every: 1,
            stages: m.stages,
            channels: m.channels,
            dilation_rates: m.dilation_rates.clone(),
            reduction: m.reduction,
            use_cpm: m.use_cpm,
            use_residual_branch: m.use_residual_branch,
            fdfm_mode: m.fdfm_mode,
            lambda1: l.lambda1,
            lambda2: l.lambda2,
            loss_eps: l.eps,
            ssim_window: l.ssim_window,
            ssim_sigma: l.ssim_sigma,
            ssim_k1: l.ssim_k1,
            ssim_k2: l.ssim_k2,
            ssim_range: l.ssim_range,
            ssim_sign: l.ssim_sign,
            contrast: l.contrast,
            use_ssim: l.use_ssim,
            use_saliency: l.use_saliency,
            ablate_cases: crate::ablation::CASES.iter().map(|c| c.to_string()).collect(),
        }
    }
}

/// Parse the right-hand side of `KEY=VALUE` as a TOML value. Anything that
/// does not parse is taken as a bare string, so paths need no quoting.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn known_keys() -> Vec<String> {
    let v = toml::Value::try_from(RunConfig::default()).expect("default config serializes");
    let mut keys: Vec<String> = v.as_table().expect("table").keys().cloned().collect();
    keys.extend(["ir_dir", "vis_dir", "val_ir_dir", "val_vis_dir", "checkpoint", "fused_dir"].map(String::from));
    keys.sort();
    keys.dedup();
    keys
}

fn check_keys(table: &toml::Table, origin: &str) -> Result<()> {
    let known = known_keys();
    for k in table.keys() {
        if !known.contains(k) {
            bail!("unknown configuration key `{k}` in {origin}");
        }
    }
    Ok(())
}

impl RunConfig {
    /// Resolve a config file (if any), then `KEY=VALUE` overrides in order.
    /// Relative paths in the file are taken relative to the file's directory.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                let mut t: toml::Table = toml::from_str(&text).with_context(|| format!("invalid TOML in {}", p.display()))?;
                check_keys(&t, &p.display().to_string())?;
                let base = p.parent().unwrap_or(Path::new(""));
                for key in ["ir_dir", "vis_dir", "val_ir_dir", "val_vis_dir", "checkpoint", "fused_dir"] {
                    if let Some(toml::Value::String(s)) = t.get(key) {
                        let joined = base.join(s);
                        t.insert(key.into(), toml::Value::String(joined.to_string_lossy().into_owned()));
                    }
                }
                t
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
            let k = k.trim();
            let mut single = toml::Table::new();
            single.insert(k.to_string(), parse_value(v.trim()));
            check_keys(&single, "--set")?;
            table.extend(single);
        }
        let cfg: RunConfig = table.try_into().context("invalid configuration value")?;
        cfg.train_config().validate()?;
        crate::ablation::parse_cases(&cfg.ablate_cases)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: StepDecay { lr0: self.lr0, factor: self.lr_decay, every: self.lr_decay_every },
            adam: AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps },
            batch: self.batch,
            crop: self.crop,
            epochs: self.epochs,
            seed: self.seed,
            block_lss_backbone: self.block_lss_backbone,
            model: ModelConfig {
                stages: self.stages,
                channels: self.channels,
                dilation_rates: self.dilation_rates.clone(),
                reduction: self.reduction,
                use_cpm: self.use_cpm,
                use_residual_branch: self.use_residual_branch,
                fdfm_mode: self.fdfm_mode,
            },
            loss: LossConfig {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                eps: self.loss_eps,
                ssim_window: self.ssim_window,
                ssim_sigma: self.ssim_sigma,
                ssim_k1: self.ssim_k1,
                ssim_k2: self.ssim_k2,
                ssim_range: self.ssim_range,
                ssim_sign: self.ssim_sign,
                contrast: self.contrast,
                use_ssim: self.use_ssim,
                use_saliency: self.use_saliency,
            },
        }
    }

    /// The resolved configuration as TOML, loadable with `--config` from any
    /// directory. Paths are made absolute.
    pub fn to_toml(&self) -> Result<String> {
        let mut c = self.clone();
        for p in [&mut c.ir_dir, &mut c.vis_dir, &mut c.val_ir_dir, &mut c.val_vis_dir, &mut c.checkpoint, &mut c.fused_dir]
            .into_iter()
            .flatten()
        {
            *p = std::path::absolute(&*p)?;
        }
        Ok(toml::to_string(&c)?)
    }
}
