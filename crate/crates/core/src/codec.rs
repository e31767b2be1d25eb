// Little-endian byte helpers shared by the checkpoint and compressed
// containers, plus the common model-config block.
//
// Config block:
//   u32 K | K * u32 scale | u32 seed_h | u32 seed_w | u32 C | C * u32 channel
//   | f64 pe_b | u32 pe_l | u32 embed_dim | u32 norm_dim | u8 t_norm

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TimeNorm};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        vs.iter().for_each(|&v| self.f64(v));
    }

    pub fn usize32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v)
            .map_err(|_| Error::InvalidConfig(format!("{v} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn finish_with_crc(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Malformed(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Malformed("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Splits off and verifies the trailing CRC-32 over everything before it.
pub(crate) fn verify_crc(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 4 {
        return Err(Error::Malformed(
            "container shorter than its checksum".into(),
        ));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(body)
}

pub(crate) fn check_magic(
    r: &mut Reader<'_>,
    magic: &'static [u8],
    name: &'static str,
) -> Result<()> {
    if r.take(magic.len()).ok() != Some(magic) {
        return Err(Error::BadMagic { expected: name });
    }
    Ok(())
}

pub(crate) fn write_config(w: &mut Writer, cfg: &ModelConfig) -> Result<()> {
    w.usize32(cfg.scale_factors.len())?;
    for &s in &cfg.scale_factors {
        w.usize32(s)?;
    }
    w.usize32(cfg.seed_h)?;
    w.usize32(cfg.seed_w)?;
    w.usize32(cfg.channels.len())?;
    for &c in &cfg.channels {
        w.usize32(c)?;
    }
    w.f64(cfg.pe_b);
    w.usize32(cfg.pe_l)?;
    w.usize32(cfg.embed_dim)?;
    w.usize32(cfg.norm_dim)?;
    w.u8(match cfg.t_norm {
        TimeNorm::IndexOverN => 0,
        TimeNorm::IndexOverNMinus1 => 1,
    });
    Ok(())
}

pub(crate) fn read_config(r: &mut Reader<'_>) -> Result<ModelConfig> {
    let list = |r: &mut Reader<'_>| -> Result<Vec<usize>> {
        let n = r.usize32()?;
        if n > 1024 {
            return Err(Error::Malformed(format!("implausible list length {n}")));
        }
        (0..n).map(|_| r.usize32()).collect()
    };
    let scale_factors = list(r)?;
    let seed_h = r.usize32()?;
    let seed_w = r.usize32()?;
    let channels = list(r)?;
    let pe_b = r.f64()?;
    let pe_l = r.usize32()?;
    let embed_dim = r.usize32()?;
    let norm_dim = r.usize32()?;
    let t_norm = match r.u8()? {
        0 => TimeNorm::IndexOverN,
        1 => TimeNorm::IndexOverNMinus1,
        v => return Err(Error::Malformed(format!("unknown time normalization {v}"))),
    };
    let cfg = ModelConfig {
        scale_factors,
        seed_h,
        seed_w,
        channels,
        pe_b,
        pe_l,
        embed_dim,
        norm_dim,
        t_norm,
    };
    cfg.validate()?;
    Ok(cfg)
}
