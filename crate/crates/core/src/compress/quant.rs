// Per-tensor linear quantization: q = round((w - min) / scale), with
// scale = (max - min) / (2^b - 1). Pruned entries take no part in the range
// and carry no symbol.

use rayon::prelude::*;

use super::Mask;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: f64,
    /// Number of symbols the tensor contributes.
    pub count: u64,
}

fn check_bits(bits: u32) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidBits(bits));
    }
    Ok(())
}

/// Quantizes one tensor. A constant tensor maps to `q = 0` with `scale = 1`.
pub fn quantize(values: &[f64], bits: u32) -> Result<(Vec<u32>, QuantParams)> {
    check_bits(bits)?;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() {
        return Ok((
            Vec::new(),
            QuantParams {
                scale: 1.0,
                zero_point: 0.0,
                count: 0,
            },
        ));
    }
    let count = values.len() as u64;
    if hi <= lo {
        return Ok((
            vec![0; values.len()],
            QuantParams {
                scale: 1.0,
                zero_point: lo,
                count,
            },
        ));
    }
    let top = ((1u64 << bits) - 1) as f64;
    let scale = (hi - lo) / top;
    let q = values
        .iter()
        .map(|&v| ((v - lo) / scale).round().clamp(0.0, top) as u32)
        .collect();
    Ok((
        q,
        QuantParams {
            scale,
            zero_point: lo,
            count,
        },
    ))
}

pub fn dequantize(q: &[u32], p: &QuantParams) -> Vec<f64> {
    q.iter()
        .map(|&s| s as f64 * p.scale + p.zero_point)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub bits: u32,
    /// Kept entries only, in flat order.
    pub symbols: Vec<u32>,
    /// One entry per layout tensor.
    pub params: Vec<QuantParams>,
}

/// Quantizes every tensor of `params` over its kept entries.
pub fn quantize_model(params: &ModelParams, mask: &Mask, bits: u32) -> Result<QuantizedModel> {
    check_bits(bits)?;
    if mask.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: mask.len(),
        });
    }
    let flat = params.as_flat();
    let per_tensor: Vec<(Vec<u32>, QuantParams)> = params
        .layout()
        .entries()
        .par_iter()
        .map(|e| {
            let kept: Vec<f64> = e
                .range()
                .filter(|&i| mask.is_kept(i))
                .map(|i| flat[i])
                .collect();
            quantize(&kept, bits)
        })
        .collect::<Result<_>>()?;
    let mut symbols = Vec::with_capacity(mask.popcount());
    let mut qp = Vec::with_capacity(per_tensor.len());
    for (q, p) in per_tensor {
        symbols.extend(q);
        qp.push(p);
    }
    Ok(QuantizedModel {
        bits,
        symbols,
        params: qp,
    })
}

/// Rebuilds a flat parameter vector; pruned entries come back as zero.
pub fn dequantize_model(
    template: &ModelParams,
    mask: &Mask,
    q: &QuantizedModel,
) -> Result<ModelParams> {
    let entries = template.layout().entries();
    if q.params.len() != entries.len() {
        return Err(Error::LengthMismatch {
            expected: entries.len(),
            actual: q.params.len(),
        });
    }
    if mask.len() != template.len() {
        return Err(Error::LengthMismatch {
            expected: template.len(),
            actual: mask.len(),
        });
    }
    let mut flat = vec![0.0; template.len()];
    let mut symbols = q.symbols.iter();
    for (e, p) in entries.iter().zip(&q.params) {
        let kept: Vec<usize> = e.range().filter(|&i| mask.is_kept(i)).collect();
        if kept.len() as u64 != p.count {
            return Err(Error::Malformed(format!(
                "{}: {} kept entries, {} symbols",
                e.name,
                kept.len(),
                p.count
            )));
        }
        for i in kept {
            let s = *symbols
                .next()
                .ok_or_else(|| Error::Malformed("symbol stream too short".into()))?;
            flat[i] = s as f64 * p.scale + p.zero_point;
        }
    }
    if symbols.next().is_some() {
        return Err(Error::Malformed("symbol stream too long".into()));
    }
    template.with_flat(flat)
}

/// `dequantize(quantize(params))`, the forward weights of straight-through
/// quantization-aware training.
pub fn fake_quantize(params: &ModelParams, mask: &Mask, bits: u32) -> Result<ModelParams> {
    dequantize_model(params, mask, &quantize_model(params, mask, bits)?)
}
