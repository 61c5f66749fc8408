//! Config file loading and per-field flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use wsst_core::pipeline::PipelineConfig;
use wsst_core::tf::SqueezeRule;

/// Every [`PipelineConfig`] field as an optional flag. Flags win over the
/// config file; the seed also honours `WSST_SEED`, which sits between the
/// two.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, alias = "window_sigma")]
    pub window_sigma: Option<f64>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long, alias = "n_bins")]
    pub n_bins: Option<usize>,
    #[arg(long, alias = "freq_max")]
    pub freq_max: Option<f64>,
    /// Ridge search band as `LO,HI` in Hz.
    #[arg(long, alias = "ridge_band", value_parser = parse_pair)]
    pub ridge_band: Option<(f64, f64)>,
    #[arg(long, alias = "ridge_penalty")]
    pub ridge_penalty: Option<f64>,
    #[arg(long, alias = "recon_band")]
    pub recon_band: Option<f64>,
    #[arg(long, alias = "cap_d")]
    pub cap_d: Option<usize>,
    #[arg(long, alias = "gamma_thresh_rel")]
    pub gamma_thresh_rel: Option<f64>,
    /// `linear` or `nearest`.
    #[arg(long, alias = "squeeze_rule", value_parser = parse_squeeze_rule)]
    pub squeeze_rule: Option<SqueezeRule>,
    #[arg(long, alias = "cycle_smoothing")]
    pub cycle_smoothing: Option<bool>,
    #[arg(long, alias = "exclude_boundary")]
    pub exclude_boundary: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, alias = "n_components")]
    pub n_components: Option<usize>,
    #[arg(long, alias = "n_boot")]
    pub n_boot: Option<usize>,
    #[arg(long, alias = "n_perm")]
    pub n_perm: Option<usize>,
    #[arg(long, alias = "loocv_repeats")]
    pub loocv_repeats: Option<usize>,
}

pub fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_squeeze_rule(s: &str) -> std::result::Result<SqueezeRule, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown squeeze rule {s:?} (linear, nearest)"))
}

pub fn load_config_file(path: &Path) -> Result<PipelineConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl ConfigArgs {
    /// File, then `WSST_SEED`, then flags; the result is validated.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let base = match &self.config {
            Some(p) => load_config_file(p)?,
            None => PipelineConfig::default(),
        };
        let mut c = base.with_env_seed()?;
        macro_rules! apply {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        apply!(
            window_sigma,
            hop,
            n_bins,
            freq_max,
            ridge_band,
            ridge_penalty,
            recon_band,
            cap_d,
            gamma_thresh_rel,
            squeeze_rule,
            cycle_smoothing,
            exclude_boundary,
            seed,
            n_boot,
            n_perm,
            loocv_repeats
        );
        if self.n_components.is_some() {
            c.n_components = self.n_components;
        }
        c.validate()?;
        Ok(c)
    }
}
