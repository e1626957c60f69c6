use std::path::Path;

use anyhow::Context;
use rirkit::codec::RvqConfig;
use rirkit::sampling::GuidanceConfig;
use serde::{Deserialize, Serialize};

/// Settings shared by every command, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub session_rate: u32,
    pub clip_seconds: f64,
    pub ingest: IngestConfig,
    pub codec: RvqConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            session_rate: rirkit::DEFAULT_SAMPLE_RATE,
            clip_seconds: 2.0,
            ingest: IngestConfig::default(),
            codec: RvqConfig::default(),
            sample: SampleConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Files whose noise floor relative to peak exceeds this are invalid.
    pub noise_floor_max_db: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { noise_floor_max_db: -20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub guidance: GuidanceConfig,
    pub ngram_order: usize,
    pub ngram_alpha: f64,
    pub maskgit_steps: usize,
    pub flow_steps: usize,
    /// Slope of the analysis classifier's log-probabilities per class of distance.
    pub classifier_sharpness: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            ngram_order: 3,
            ngram_alpha: 0.1,
            maskgit_steps: 20,
            flow_steps: 25,
            classifier_sharpness: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_resamples: usize,
    pub level: f64,
    /// Length of the generated dry signals used when no dry directory is given.
    pub dry_seconds: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_resamples: 2000, level: 0.95, dry_seconds: 2.0 }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.session_rate == 0 || !(cfg.clip_seconds > 0.0) {
            anyhow::bail!("session_rate and clip_seconds must be positive");
        }
        Ok(cfg)
    }
}
