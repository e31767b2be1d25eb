//! The image-wise generator: frame index -> positional encoding -> MLP seed
//! map -> stack of conv/pixel-shuffle upscale blocks, with a 3-channel
//! header after every block.
//!
//! Parameters are stored as one flat `Vec<f64>` whose layout is a pure
//! function of [`ModelConfig`]. The order, per stage, is
//!
//! ```text
//! embed.fc1.weight  [2l, embed_dim]
//! embed.fc1.bias    [embed_dim]
//! embed.fc2.weight  [embed_dim, c0*seed_h*seed_w]
//! embed.fc2.bias    [c0*seed_h*seed_w]
//! embed.norm.gamma  [c0]
//! embed.norm.beta   [c0]
//! block{k}.weight   [c_{k+1}*s_k^2, c_k, 3, 3]   for k in 0..K
//! block{k}.bias     [c_{k+1}*s_k^2]
//! header{k}.weight  [3, c_{k+1}, 3, 3]
//! header{k}.bias    [3]
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Convolution kernel size used by every block and header.
pub const KERNEL: usize = 3;

/// How the 0-based frame index `n` of an `N`-frame video maps to `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeNorm {
    /// `t = n / N`
    IndexOverN,
    /// `t = n / max(N - 1, 1)`, so the first and last frames hit 0 and 1.
    #[default]
    IndexOverNMinus1,
}

impl TimeNorm {
    pub fn time(self, n: usize, frames: usize) -> f64 {
        match self {
            TimeNorm::IndexOverN => n as f64 / frames.max(1) as f64,
            TimeNorm::IndexOverNMinus1 => n as f64 / frames.saturating_sub(1).max(1) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub scale_factors: Vec<usize>,
    pub seed_h: usize,
    pub seed_w: usize,
    pub channels: Vec<usize>,
    pub pe_b: f64,
    pub pe_l: usize,
    pub embed_dim: usize,
    /// Kept for parity with the reference architecture; the seed map is
    /// normalized by a per-channel affine whose width is `channels[0]`.
    pub norm_dim: usize,
    pub t_norm: TimeNorm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// CPU-sized configuration producing 40x48 frames.
    pub fn desk() -> Self {
        ModelConfig {
            scale_factors: vec![2, 2, 2],
            seed_h: 5,
            seed_w: 6,
            channels: vec![32, 24, 16, 12],
            pe_b: 1.25,
            pe_l: 20,
            embed_dim: 196,
            norm_dim: 128,
            t_norm: TimeNorm::IndexOverNMinus1,
        }
    }

    /// Full-size layout: a 3x4 seed map upscaled by 5,2,2,2,2 to 240x320.
    pub fn full_scale() -> Self {
        ModelConfig {
            scale_factors: vec![5, 2, 2, 2, 2],
            seed_h: 3,
            seed_w: 4,
            channels: vec![64, 64, 48, 32, 24, 16],
            pe_b: 1.25,
            pe_l: 80,
            embed_dim: 196,
            norm_dim: 128,
            t_norm: TimeNorm::IndexOverNMinus1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.scale_factors.is_empty() || self.scale_factors.contains(&0) {
            return bad(format!(
                "scale factors must be positive and nonempty: {:?}",
                self.scale_factors
            ));
        }
        if self.channels.len() != self.scale_factors.len() + 1 {
            return bad(format!(
                "{} channel widths for {} blocks; need one more than blocks",
                self.channels.len(),
                self.scale_factors.len()
            ));
        }
        if self.channels.contains(&0) || self.seed_h == 0 || self.seed_w == 0 || self.embed_dim == 0
        {
            return bad("zero-sized dimension".into());
        }
        if self.pe_l < 1 || !(self.pe_b > 1.0) {
            return bad(format!(
                "need pe_l >= 1 and pe_b > 1, got l={} b={}",
                self.pe_l, self.pe_b
            ));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.scale_factors.len()
    }

    /// `(H_k, W_k)` emitted by each header.
    pub fn head_resolutions(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.seed_h, self.seed_w);
        self.scale_factors
            .iter()
            .map(|&s| {
                h *= s;
                w *= s;
                (h, w)
            })
            .collect()
    }

    pub fn output_resolution(&self) -> (usize, usize) {
        *self
            .head_resolutions()
            .last()
            .expect("validated config has blocks")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: ParamKind,
    fan_in: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

// Index of the first block entry; the embedding owns entries 0..6.
const EMBED_ENTRIES: usize = 6;
const STAGE_ENTRIES: usize = 4;

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, shape: Vec<usize>, kind: ParamKind, fan_in: usize| {
            let len: usize = shape.iter().product();
            entries.push(ParamEntry {
                name,
                shape,
                offset,
                kind,
                fan_in,
            });
            offset += len;
        };
        let pe = 2 * cfg.pe_l;
        let seed = cfg.channels[0] * cfg.seed_h * cfg.seed_w;
        add(
            "embed.fc1.weight".into(),
            vec![pe, cfg.embed_dim],
            ParamKind::Weight,
            pe,
        );
        add(
            "embed.fc1.bias".into(),
            vec![cfg.embed_dim],
            ParamKind::Bias,
            pe,
        );
        add(
            "embed.fc2.weight".into(),
            vec![cfg.embed_dim, seed],
            ParamKind::Weight,
            cfg.embed_dim,
        );
        add(
            "embed.fc2.bias".into(),
            vec![seed],
            ParamKind::Bias,
            cfg.embed_dim,
        );
        add(
            "embed.norm.gamma".into(),
            vec![cfg.channels[0]],
            ParamKind::Norm,
            1,
        );
        add(
            "embed.norm.beta".into(),
            vec![cfg.channels[0]],
            ParamKind::Norm,
            1,
        );
        for (k, &s) in cfg.scale_factors.iter().enumerate() {
            let (c_in, c_out) = (cfg.channels[k], cfg.channels[k + 1]);
            let fan = c_in * KERNEL * KERNEL;
            add(
                format!("block{k}.weight"),
                vec![c_out * s * s, c_in, KERNEL, KERNEL],
                ParamKind::Weight,
                fan,
            );
            add(
                format!("block{k}.bias"),
                vec![c_out * s * s],
                ParamKind::Bias,
                fan,
            );
            let hfan = c_out * KERNEL * KERNEL;
            add(
                format!("header{k}.weight"),
                vec![3, c_out, KERNEL, KERNEL],
                ParamKind::Weight,
                hfan,
            );
            add(format!("header{k}.bias"), vec![3], ParamKind::Bias, hfan);
        }
        Ok(ParamLayout {
            entries,
            total: offset,
        })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Flat parameter vector paired with the layout that gives it structure.
#[derive(Clone, PartialEq)]
pub struct ModelParams {
    config: Arc<ModelConfig>,
    layout: Arc<ParamLayout>,
    flat: Vec<f64>,
}

impl fmt::Debug for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelParams")
            .field("config", &self.config)
            .field("len", &self.flat.len())
            .finish()
    }
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let layout = ParamLayout::new(cfg)?;
        let flat = vec![0.0; layout.total()];
        Ok(ModelParams {
            config: Arc::new(cfg.clone()),
            layout: Arc::new(layout),
            flat,
        })
    }

    /// Kaiming-uniform (fan-in) weights, zero biases, identity affine.
    pub fn init_random(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Arc::clone(&p.layout);
        for e in layout.entries() {
            let dst = &mut p.flat[e.range()];
            match e.kind {
                ParamKind::Weight => {
                    let bound = (6.0 / e.fan_in as f64).sqrt();
                    dst.iter_mut()
                        .for_each(|v| *v = rng.random_range(-bound..bound));
                }
                ParamKind::Bias => {}
                ParamKind::Norm if e.name.ends_with("gamma") => {
                    dst.iter_mut().for_each(|v| *v = 1.0)
                }
                ParamKind::Norm => {}
            }
        }
        Ok(p)
    }

    pub fn unflatten(cfg: &ModelConfig, flat: Vec<f64>) -> Result<Self> {
        let layout = ParamLayout::new(cfg)?;
        if flat.len() != layout.total() {
            return Err(Error::LengthMismatch {
                expected: layout.total(),
                actual: flat.len(),
            });
        }
        Ok(ModelParams {
            config: Arc::new(cfg.clone()),
            layout: Arc::new(layout),
            flat,
        })
    }

    /// Same structure, new values.
    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != self.flat.len() {
            return Err(Error::LengthMismatch {
                expected: self.flat.len(),
                actual: flat.len(),
            });
        }
        Ok(ModelParams {
            config: Arc::clone(&self.config),
            layout: Arc::clone(&self.layout),
            flat,
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.flat.clone()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let e = self.layout.entry(name)?;
        Tensor::new(e.shape.clone(), self.flat[e.range()].to_vec()).ok()
    }

    /// Records every parameter tensor on `tape` in layout order.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.layout
            .entries()
            .iter()
            .map(|e| {
                let t = Tensor::new(e.shape.clone(), self.flat[e.range()].to_vec())
                    .expect("layout shapes are valid");
                if requires_grad {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    /// Seed feature map for time `t` without recording gradients.
    pub fn embed(&self, t: f64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let v = embed_on_tape(&mut tape, &self.config, &vars, t)?;
        Ok(tape.value(v).clone())
    }

    pub fn forward_multires(&self, t: f64) -> Result<MultiResOutput> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let heads = forward_on_tape(&mut tape, &self.config, &vars, t)?;
        Ok(MultiResOutput {
            frames: heads.into_iter().map(|v| tape.value(v).clone()).collect(),
        })
    }

    /// Full-resolution frame for time `t`.
    pub fn render(&self, t: f64) -> Result<Tensor> {
        Ok(self
            .forward_multires(t)?
            .frames
            .pop()
            .expect("at least one head"))
    }
}

/// One predicted frame per header, coarse to fine.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiResOutput {
    pub frames: Vec<Tensor>,
}

impl MultiResOutput {
    pub fn final_frame(&self) -> &Tensor {
        self.frames.last().expect("at least one head")
    }
}

/// `[sin(b^0 pi t), cos(b^0 pi t), ..., sin(b^{l-1} pi t), cos(b^{l-1} pi t)]`.
pub fn positional_encoding(t: f64, b: f64, l: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::DomainError(format!("t = {t} outside [0, 1]")));
    }
    if l < 1 || !(b > 1.0) {
        return Err(Error::DomainError(format!(
            "need l >= 1 and b > 1, got l={l} b={b}"
        )));
    }
    let mut out = Vec::with_capacity(2 * l);
    for i in 0..l {
        let arg = b.powi(i as i32) * PI * t;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

pub fn embed_on_tape(tape: &mut Tape, cfg: &ModelConfig, vars: &[Var], t: f64) -> Result<Var> {
    let pe = positional_encoding(t, cfg.pe_b, cfg.pe_l)?;
    let x = tape.constant(Tensor::new(vec![1, pe.len()], pe)?);
    let h = tape.matmul(x, vars[0])?;
    let h = tape.add_bias(h, vars[1])?;
    let h = tape.gelu(h)?;
    let s = tape.matmul(h, vars[2])?;
    let s = tape.add_bias(s, vars[3])?;
    let s = tape.reshape(s, &[cfg.channels[0], cfg.seed_h, cfg.seed_w])?;
    tape.channel_affine(s, vars[4], vars[5])
}

/// Records the full forward pass and returns one sigmoid-squashed frame var
/// per header.
pub fn forward_on_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    vars: &[Var],
    t: f64,
) -> Result<Vec<Var>> {
    let mut x = embed_on_tape(tape, cfg, vars, t)?;
    let mut heads = Vec::with_capacity(cfg.num_blocks());
    for (k, &s) in cfg.scale_factors.iter().enumerate() {
        let base = EMBED_ENTRIES + STAGE_ENTRIES * k;
        let y = tape.conv2d(x, vars[base], vars[base + 1])?;
        let y = tape.pixel_shuffle(y, s)?;
        x = tape.gelu(y)?;
        let hd = tape.conv2d(x, vars[base + 2], vars[base + 3])?;
        heads.push(tape.sigmoid(hd)?);
    }
    Ok(heads)
}
