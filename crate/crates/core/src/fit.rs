//! Adam fitting of a single video, used for compression fine-tuning and the
//! denoising experiments.

use serde::{Deserialize, Serialize};

use crate::compress::{fake_quantize, Mask};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelParams;
use crate::objective::VideoObjective;
use crate::optim::{adam_step, AdamState};
use crate::video::Video;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub loss: LossConfig,
    /// Straight-through quantization-aware training at this bit width.
    pub qat_bits: Option<u32>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 200,
            lr: 1e-3,
            loss: LossConfig::default(),
            qat_bits: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ModelParams,
    /// Loss before each update.
    pub losses: Vec<f64>,
}

/// Runs `cfg.steps` Adam updates on the whole video. With a mask, pruned
/// entries are zeroed before the first step and after every step.
pub fn fit(
    init: &ModelParams,
    video: &Video,
    cfg: &FitConfig,
    mask: Option<&Mask>,
) -> Result<FitResult> {
    cfg.loss.validate()?;
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "fit lr must be positive, got {}",
            cfg.lr
        )));
    }
    let objective = VideoObjective::new(init, &cfg.loss, video, video.len())?;
    let mut phi = init.flatten();
    if let Some(m) = mask {
        m.apply(&mut phi)?;
    }
    let all = Mask::all_keep(init.len());
    let mut opt = AdamState::new(phi.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = match cfg.qat_bits {
            Some(bits) => {
                let q = fake_quantize(&init.with_flat(phi.clone())?, mask.unwrap_or(&all), bits)?;
                let e = objective.evaluate(q.as_flat())?;
                (e.loss, e.grad)
            }
            None => {
                let e = objective.evaluate(&phi)?;
                (e.loss, e.grad)
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step + 1,
                value: loss,
            });
        }
        losses.push(loss);
        adam_step(&mut phi, &grad, &mut opt, cfg.lr)?;
        if let Some(m) = mask {
            m.apply(&mut phi)?;
        }
    }
    Ok(FitResult {
        params: init.with_flat(phi)?,
        losses,
    })
}
