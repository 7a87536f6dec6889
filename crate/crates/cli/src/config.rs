//! Run configuration: a single JSON file with defaults for every knob,
//! validated in full before any command does work.

use cdp_twin_core::analysis::AggregationMode;
use cdp_twin_core::channel::{json_offset, SyntheticChannelParams};
use cdp_twin_core::ddpm::{linear_schedule, NoiseSchedule, VarianceMode};
use cdp_twin_core::turbo::TurboWeights;
use cdp_twin_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub template: TemplateConfig,
    pub channel: ChannelConfig,
    pub ddpm: DdpmConfig,
    pub turbo: TurboConfig,
    pub metrics: MetricsConfig,
    pub aggregation: AggregationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            template: TemplateConfig::default(),
            channel: ChannelConfig::default(),
            ddpm: DdpmConfig::default(),
            turbo: TurboConfig::default(),
            metrics: MetricsConfig::default(),
            aggregation: AggregationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateConfig {
    pub width: usize,
    pub height: usize,
    pub density: f64,
    pub scale: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            width: 228,
            height: 228,
            density: 0.5,
            scale: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub contrast: f64,
    pub dot_gain: f64,
    pub noise_floor: f64,
    pub noise_gain: f64,
    /// Fitted model to use instead of the synthetic channel.
    pub model_path: Option<PathBuf>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let p = SyntheticChannelParams::default();
        Self {
            contrast: p.contrast,
            dot_gain: p.dot_gain,
            noise_floor: p.noise_floor,
            noise_gain: p.noise_gain,
            model_path: None,
        }
    }
}

impl ChannelConfig {
    pub fn params(&self) -> SyntheticChannelParams {
        SyntheticChannelParams {
            contrast: self.contrast,
            dot_gain: self.dot_gain,
            noise_floor: self.noise_floor,
            noise_gain: self.noise_gain,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            beta_start: 1e-6,
            beta_end: 0.01,
            steps: 2000,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.beta_start, self.beta_end, self.steps)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpmConfig {
    pub train: ScheduleConfig,
    pub refine: ScheduleConfig,
    pub buckets: usize,
    pub patch_radius: usize,
    pub samples_per_pair: usize,
    pub loss_batch: usize,
    pub variance: VarianceMode,
}

impl Default for DdpmConfig {
    fn default() -> Self {
        Self {
            train: ScheduleConfig::default(),
            refine: ScheduleConfig {
                beta_start: 1e-4,
                beta_end: 0.09,
                steps: 1000,
            },
            buckets: 8,
            patch_radius: 1,
            samples_per_pair: 8,
            loss_batch: 36,
            variance: VarianceMode::Posterior,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurboConfig {
    pub lambda_t: f64,
    pub lambda_d: f64,
    pub lambda_r: f64,
}

impl Default for TurboConfig {
    fn default() -> Self {
        Self {
            lambda_t: 1.0,
            lambda_d: 1.0,
            lambda_r: 1.0,
        }
    }
}

impl TurboConfig {
    pub fn weights(&self) -> Result<TurboWeights> {
        TurboWeights::new(self.lambda_t, self.lambda_d, self.lambda_r)
    }
}

/// How continuous template estimates are turned into bits for Hamming
/// scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binarization {
    Otsu,
    Fixed,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub otsu_bins: usize,
    pub binarization: Binarization,
    /// Threshold used when `binarization` is `fixed`.
    pub fixed_threshold: f64,
    pub ssim: SsimConfig,
    /// Patch side for pFID histogram features.
    pub patch: usize,
    pub feature_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            otsu_bins: 256,
            binarization: Binarization::Otsu,
            fixed_threshold: 0.5,
            ssim: SsimConfig::default(),
            patch: 19,
            feature_bins: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    /// Realizations per template for the sampling commands.
    pub k: usize,
    pub modes: Vec<AggregationMode>,
    /// Prefix sizes for k sweeps, strictly increasing.
    pub ks: Vec<usize>,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            k: 21,
            modes: vec![
                AggregationMode::Mean,
                AggregationMode::Median,
                AggregationMode::MeanOfScores,
            ],
            ks: vec![1, 3, 7, 21],
        }
    }
}

impl RunConfig {
    /// Reads a config file, or returns defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::format(json_offset(&text, &e), e.to_string()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every field against the owning module's preconditions.
    pub fn validate(&self) -> Result<()> {
        let t = &self.template;
        if t.width == 0 || t.height == 0 {
            return Err(Error::parameter("template geometry must be positive"));
        }
        if !(t.density > 0.0 && t.density < 1.0) {
            return Err(Error::parameter(format!(
                "template density {} must lie strictly inside (0, 1)",
                t.density
            )));
        }
        if t.scale != 1 && t.scale != 3 {
            return Err(Error::parameter(format!(
                "unsupported scale {}; expected 1 or 3",
                t.scale
            )));
        }
        self.channel.params().validate()?;
        self.ddpm.train.build()?;
        self.ddpm.refine.build()?;
        if self.ddpm.buckets == 0 {
            return Err(Error::parameter("ddpm.buckets must be at least 1"));
        }
        if self.ddpm.samples_per_pair == 0 {
            return Err(Error::parameter("ddpm.samples_per_pair must be at least 1"));
        }
        if self.ddpm.loss_batch == 0 {
            return Err(Error::parameter("ddpm.loss_batch must be at least 1"));
        }
        self.turbo.weights()?;
        let m = &self.metrics;
        if m.otsu_bins < 2 {
            return Err(Error::parameter("metrics.otsu_bins must be at least 2"));
        }
        if !(m.fixed_threshold.is_finite() && (0.0..=1.0).contains(&m.fixed_threshold)) {
            return Err(Error::parameter(format!(
                "metrics.fixed_threshold {} must lie in [0, 1]",
                m.fixed_threshold
            )));
        }
        if m.ssim.window == 0 || m.ssim.window % 2 == 0 {
            return Err(Error::parameter("metrics.ssim.window must be odd"));
        }
        if !(m.ssim.sigma > 0.0 && m.ssim.k1 > 0.0 && m.ssim.k2 > 0.0 && m.ssim.dynamic_range > 0.0)
        {
            return Err(Error::parameter(
                "metrics.ssim constants must be positive",
            ));
        }
        if m.patch == 0 || m.feature_bins == 0 {
            return Err(Error::parameter(
                "metrics.patch and metrics.feature_bins must be positive",
            ));
        }
        let a = &self.aggregation;
        if a.k == 0 {
            return Err(Error::parameter("aggregation.k must be at least 1"));
        }
        if a.modes.is_empty() {
            return Err(Error::parameter("aggregation.modes must not be empty"));
        }
        if a.ks.is_empty() || !a.ks.windows(2).all(|w| w[0] < w[1]) || a.ks[0] == 0 {
            return Err(Error::parameter(
                "aggregation.ks must be non-empty, positive, and strictly increasing",
            ));
        }
        Ok(())
    }

    /// Serialized form written into output directories for provenance.
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
