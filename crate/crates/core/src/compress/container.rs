// MNRC1 compressed-model container. Layout in docs/format.md.

use std::fs;
use std::path::Path;

use super::huffman;
use super::quant::{dequantize_model, quantize_model, QuantParams, QuantizedModel};
use super::Mask;
use crate::codec::{check_magic, read_config, verify_crc, write_config, Reader, Writer};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamLayout};
use crate::video::Video;

pub const COMPRESSED_MAGIC: &[u8; 5] = b"MNRC1";
pub const COMPRESSED_VERSION: u16 = 1;
pub const CODER_HUFFMAN: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedModel {
    pub config: ModelConfig,
    pub mask: Mask,
    pub q_bits: u32,
    pub quant: Vec<QuantParams>,
    /// Canonical code length per symbol value.
    pub codebook: Vec<u8>,
    pub payload: Vec<u8>,
}

/// Quantizes the kept entries of `params` and entropy-codes the symbols.
/// Without a mask every entry is kept.
pub fn compress_model(
    params: &ModelParams,
    mask: Option<&Mask>,
    q_bits: u32,
) -> Result<CompressedModel> {
    let all;
    let mask = match mask {
        Some(m) => m,
        None => {
            all = Mask::all_keep(params.len());
            &all
        }
    };
    let q = quantize_model(params, mask, q_bits)?;
    let enc = huffman::encode(&q.symbols)?;
    Ok(CompressedModel {
        config: params.config().clone(),
        mask: mask.clone(),
        q_bits,
        quant: q.params,
        codebook: enc.lengths,
        payload: enc.payload,
    })
}

impl CompressedModel {
    pub fn symbol_count(&self) -> usize {
        self.quant.iter().map(|p| p.count as usize).sum()
    }

    pub fn symbols(&self) -> Result<Vec<u32>> {
        let s = huffman::decode(&self.codebook, &self.payload, self.symbol_count())?;
        let limit = 1u64 << self.q_bits;
        if s.iter().any(|&v| v as u64 >= limit) {
            return Err(Error::Malformed(format!(
                "symbol outside {}-bit range",
                self.q_bits
            )));
        }
        Ok(s)
    }

    pub fn decompress(&self) -> Result<ModelParams> {
        let template = ModelParams::zeros(&self.config)?;
        let q = QuantizedModel {
            bits: self.q_bits,
            symbols: self.symbols()?,
            params: self.quant.clone(),
        };
        dequantize_model(&template, &self.mask, &q)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(COMPRESSED_MAGIC);
        w.u16(COMPRESSED_VERSION);
        write_config(&mut w, &self.config)?;
        w.u8(CODER_HUFFMAN);
        w.u8(u8::try_from(self.q_bits).map_err(|_| Error::InvalidBits(self.q_bits))?);
        w.u64(self.mask.len() as u64);
        w.bytes(&self.mask.to_packed());
        w.usize32(self.quant.len())?;
        for p in &self.quant {
            w.f64(p.scale);
            w.f64(p.zero_point);
            w.u64(p.count);
        }
        w.usize32(self.codebook.len())?;
        w.bytes(&self.codebook);
        w.u64(self.payload.len() as u64);
        w.bytes(&self.payload);
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        check_magic(&mut r, COMPRESSED_MAGIC, "MNRC1")?;
        let version = r.u16()?;
        if version != COMPRESSED_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let body = verify_crc(bytes)?;
        let mut r = Reader::new(body);
        r.take(COMPRESSED_MAGIC.len() + 2)?;
        let config = read_config(&mut r)?;
        let coder = r.u8()?;
        if coder != CODER_HUFFMAN {
            return Err(Error::Malformed(format!("unknown coder id {coder}")));
        }
        let q_bits = r.u8()? as u32;
        if !(2..=16).contains(&q_bits) {
            return Err(Error::InvalidBits(q_bits));
        }
        let n = r.u64()? as usize;
        let layout = ParamLayout::new(&config)?;
        if n != layout.total() {
            return Err(Error::LengthMismatch {
                expected: layout.total(),
                actual: n,
            });
        }
        let mask = Mask::from_packed(r.take(n.div_ceil(8))?, n)?;
        let tensors = r.usize32()?;
        if tensors != layout.entries().len() {
            return Err(Error::LengthMismatch {
                expected: layout.entries().len(),
                actual: tensors,
            });
        }
        let mut quant = Vec::with_capacity(tensors);
        for _ in 0..tensors {
            let scale = r.f64()?;
            let zero_point = r.f64()?;
            quant.push(QuantParams {
                scale,
                zero_point,
                count: r.u64()?,
            });
        }
        let alphabet = r.usize32()?;
        if alphabet > 1 << q_bits {
            return Err(Error::Malformed(format!(
                "codebook of {alphabet} entries for {q_bits}-bit symbols"
            )));
        }
        let codebook = r.take(alphabet)?.to_vec();
        let plen = r.u64()? as usize;
        let payload = r.take(plen)?.to_vec();
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        Ok(CompressedModel {
            config,
            mask,
            q_bits,
            quant,
            codebook,
            payload,
        })
    }

    /// Size of the serialized container in bits.
    pub fn container_bits(&self) -> Result<u64> {
        Ok(self.to_bytes()?.len() as u64 * 8)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Bits per pixel for a container of `bits` bits covering `pixels` pixels
/// (`H * W * N`).
pub fn bpp_from_bits(bits: u64, pixels: usize) -> Result<f64> {
    if pixels == 0 {
        return Err(Error::EmptyVideo);
    }
    Ok(bits as f64 / pixels as f64)
}

pub fn bpp(model: &CompressedModel, video: &Video) -> Result<f64> {
    bpp_from_bits(
        model.container_bits()?,
        video.len() * video.height() * video.width(),
    )
}
