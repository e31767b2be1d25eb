use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use metanerv::fit::FitConfig;
use metanerv::video::Family;
use metanerv::{MetaConfig, ModelConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Video `i` of each split uses `families[i % families.len()]`.
    pub families: Vec<Family>,
    pub train: usize,
    pub test: usize,
    pub frames: usize,
    /// Defaults to the model's output resolution.
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub velocity: f64,
    pub size: f64,
    pub contrast: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            families: vec![Family::BouncingBall],
            train: 24,
            test: 8,
            frames: 8,
            height: None,
            width: None,
            velocity: 0.03,
            size: 0.35,
            contrast: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub steps: usize,
    /// Inner rate when the initialization carries no learned rates.
    pub lr: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            steps: 3,
            lr: metanerv::meta::DEFAULT_BASELINE_LR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressConfig {
    pub ratios: Vec<f64>,
    pub bits: u32,
    pub finetune_steps: usize,
    /// Fine-tune with straight-through quantization at `bits`.
    pub qat: bool,
}

impl Default for CompressConfig {
    fn default() -> Self {
        CompressConfig {
            ratios: vec![0.0],
            bits: 8,
            finetune_steps: 30,
            qat: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub sigma: f64,
    pub noise_seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            sigma: 0.1,
            noise_seed: 1,
        }
    }
}

/// Everything a command reads besides its paths. Echoed into every report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub meta: MetaConfig,
    pub adapt: AdaptConfig,
    pub fit: FitConfig,
    pub compress: CompressConfig,
    pub denoise: DenoiseConfig,
    pub dataset: DatasetConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg: RunConfig = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.meta.seed = cfg.seed;
        cfg.model.validate()?;
        cfg.meta.validate()?;
        Ok(cfg)
    }
}
