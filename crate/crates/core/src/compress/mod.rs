//! Pruning, quantization and entropy coding of fitted models.

mod container;
pub mod huffman;
mod quant;

pub use container::{
    bpp, bpp_from_bits, compress_model, CompressedModel, CODER_HUFFMAN, COMPRESSED_MAGIC,
    COMPRESSED_VERSION,
};
pub use quant::{
    dequantize, dequantize_model, fake_quantize, quantize, quantize_model, QuantParams,
    QuantizedModel,
};

use crate::error::{Error, Result};
use crate::fit::{fit, FitConfig};
use crate::model::{ModelParams, ParamKind};
use crate::video::Video;

/// Keep-mask over the flattened parameter vector; `true` means kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    keep: Vec<bool>,
}

impl Mask {
    pub fn all_keep(len: usize) -> Self {
        Mask {
            keep: vec![true; len],
        }
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        Mask { keep }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub fn popcount(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn pruned(&self) -> usize {
        self.len() - self.popcount()
    }

    /// Zeroes every pruned entry.
    pub fn apply(&self, values: &mut [f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: values.len(),
            });
        }
        for (v, &k) in values.iter_mut().zip(&self.keep) {
            if !k {
                *v = 0.0;
            }
        }
        Ok(())
    }

    /// Bit-packed, bit `i % 8` of byte `i / 8`.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len().div_ceil(8)];
        for (i, &k) in self.keep.iter().enumerate() {
            if k {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_packed(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::LengthMismatch {
                expected: len.div_ceil(8),
                actual: bytes.len(),
            });
        }
        Ok(Mask {
            keep: (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect(),
        })
    }
}

/// Flat indices of the parameters eligible for pruning (weight tensors only).
pub fn prunable_indices(params: &ModelParams) -> Vec<usize> {
    params
        .layout()
        .entries()
        .iter()
        .filter(|e| e.kind == ParamKind::Weight)
        .flat_map(|e| e.range())
        .collect()
}

/// Zeroes the `floor(ratio * #weights)` smallest-magnitude weights across all
/// weight tensors. Ties go to the lower flat index.
pub fn prune_global_magnitude(params: &ModelParams, ratio: f64) -> Result<(ModelParams, Mask)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidRatio(ratio));
    }
    let flat = params.as_flat();
    let mut idx = prunable_indices(params);
    let count = (ratio * idx.len() as f64).floor() as usize;
    idx.sort_by(|&a, &b| flat[a].abs().total_cmp(&flat[b].abs()).then(a.cmp(&b)));
    let mut keep = vec![true; flat.len()];
    for &i in &idx[..count] {
        keep[i] = false;
    }
    let mask = Mask { keep };
    let mut out = params.flatten();
    mask.apply(&mut out)?;
    Ok((params.with_flat(out)?, mask))
}

/// Adam fine-tuning with pruned entries held at zero after every step.
pub fn finetune_pruned(
    params: &ModelParams,
    mask: &Mask,
    video: &Video,
    steps: usize,
    cfg: &FitConfig,
) -> Result<ModelParams> {
    if mask.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: mask.len(),
        });
    }
    let cfg = FitConfig {
        steps,
        ..cfg.clone()
    };
    Ok(fit(params, video, &cfg, Some(mask))?.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            scale_factors: vec![2],
            seed_h: 2,
            seed_w: 2,
            channels: vec![4, 4],
            pe_l: 3,
            embed_dim: 5,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn ratio_zero_is_identity() {
        let p = ModelParams::init_random(&tiny(), 1).unwrap();
        let (q, m) = prune_global_magnitude(&p, 0.0).unwrap();
        assert_eq!(q, p);
        assert_eq!(m.pruned(), 0);
    }

    #[test]
    fn magnitude_order_and_floor_count() {
        let p = ModelParams::init_random(&tiny(), 2).unwrap();
        let n = prunable_indices(&p).len();
        for ratio in [0.1, 0.25, 0.5, 0.9] {
            let (q, m) = prune_global_magnitude(&p, ratio).unwrap();
            assert_eq!(m.pruned(), (ratio * n as f64).floor() as usize);
            let max_pruned = (0..p.len())
                .filter(|&i| !m.is_kept(i))
                .map(|i| p.as_flat()[i].abs())
                .fold(0.0, f64::max);
            for i in prunable_indices(&p) {
                if m.is_kept(i) {
                    assert!(p.as_flat()[i].abs() >= max_pruned);
                } else {
                    assert_eq!(q.as_flat()[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn biases_and_norm_are_exempt() {
        let mut p = ModelParams::init_random(&tiny(), 3).unwrap();
        for e in p.layout().clone().entries() {
            if e.kind != ParamKind::Weight {
                p.as_flat_mut()[e.range()]
                    .iter_mut()
                    .for_each(|v| *v = 1e-9);
            }
        }
        let (_, m) = prune_global_magnitude(&p, 0.5).unwrap();
        for e in p
            .layout()
            .entries()
            .iter()
            .filter(|e| e.kind != ParamKind::Weight)
        {
            assert!(e.range().all(|i| m.is_kept(i)));
        }
    }

    #[test]
    fn invalid_ratio() {
        let p = ModelParams::init_random(&tiny(), 1).unwrap();
        for r in [-0.1, 1.0, f64::NAN] {
            assert!(matches!(
                prune_global_magnitude(&p, r),
                Err(Error::InvalidRatio(_))
            ));
        }
    }

    #[test]
    fn packed_mask_round_trip() {
        let m = Mask::from_keep((0..21).map(|i| i % 3 != 0).collect());
        let packed = m.to_packed();
        assert_eq!(packed.len(), 3);
        assert_eq!(Mask::from_packed(&packed, 21).unwrap(), m);
    }
}
