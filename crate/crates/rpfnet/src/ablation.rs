//! Named ablation cases and the configuration change each one makes.

use anyhow::{bail, Result};
use rpfnet_core::losses::ContrastMode;
use rpfnet_core::network::FdfmMode;

use crate::config::RunConfig;

pub const BASELINE: &str = "baseline";

/// In table order.
pub const CASES: [&str; 8] =
    ["no_ls", "lc_to_freq_l1", "spatial_lc", "no_w", "no_lss", "fdfm_to_transformer", "no_cpm", "no_res_prior"];

pub fn parse_cases(names: &[String]) -> Result<Vec<&'static str>> {
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        match CASES.iter().find(|c| **c == n.as_str()) {
            Some(c) if !out.contains(c) => out.push(*c),
            Some(c) => bail!("ablation case `{c}` listed twice"),
            None => bail!("unknown ablation case `{n}`; valid cases: {}", CASES.join(", ")),
        }
    }
    Ok(out)
}

/// `base` with one component removed or replaced.
pub fn apply(base: &RunConfig, case: &str) -> Result<RunConfig> {
    let mut c = base.clone();
    match case {
        BASELINE => {}
        "no_ls" => c.use_ssim = false,
        "lc_to_freq_l1" => c.contrast = ContrastMode::FrequencyL1,
        "spatial_lc" => c.contrast = ContrastMode::Spatial,
        "no_w" => c.contrast = ContrastMode::Unweighted,
        "no_lss" => c.use_saliency = false,
        "fdfm_to_transformer" => c.fdfm_mode = FdfmMode::TransformerSub,
        "no_cpm" => c.use_cpm = false,
        "no_res_prior" => c.use_residual_branch = false,
        other => bail!("unknown ablation case `{other}`; valid cases: {}", CASES.join(", ")),
    }
    c.ablate_cases.clear();
    c.checkpoint = None;
    Ok(c)
}
