//! Canonical Huffman coding of integer symbol streams.
//!
//! The code is described entirely by one length per symbol of the alphabet
//! `0..lengths.len()` (zero for absent symbols). Codes are assigned in
//! `(length, symbol)` order and written MSB-first. A stream with one distinct
//! symbol gets length 1 for it and an empty payload.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

pub const MAX_CODE_LEN: u8 = 63;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub lengths: Vec<u8>,
    pub payload: Vec<u8>,
    /// Meaningful bits in `payload`; the rest of the last byte is zero.
    pub bits: u64,
}

/// Code lengths from a histogram indexed by symbol.
pub fn code_lengths(hist: &[u64]) -> Vec<u8> {
    let mut lengths = vec![0u8; hist.len()];
    let present: Vec<usize> = (0..hist.len()).filter(|&s| hist[s] > 0).collect();
    match present.len() {
        0 => return lengths,
        1 => {
            lengths[present[0]] = 1;
            return lengths;
        }
        _ => {}
    }
    // Nodes: leaves first, then internal nodes. Ties resolve on node id so
    // the tree is a pure function of the histogram.
    let mut parent: Vec<usize> = vec![usize::MAX; present.len()];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = present
        .iter()
        .enumerate()
        .map(|(id, &s)| Reverse((hist[s], id)))
        .collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((wa + wb, id)));
    }
    let mut depth = vec![0u8; parent.len()];
    for id in (0..parent.len()).rev() {
        if parent[id] != usize::MAX {
            depth[id] = depth[parent[id]] + 1;
        }
    }
    for (leaf, &s) in present.iter().enumerate() {
        lengths[s] = depth[leaf];
    }
    lengths
}

/// `(code, length)` per symbol; absent symbols get length 0.
fn canonical_codes(lengths: &[u8]) -> Result<Vec<(u64, u8)>> {
    let mut order: Vec<usize> = (0..lengths.len()).filter(|&s| lengths[s] > 0).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut codes = vec![(0u64, 0u8); lengths.len()];
    let mut code = 0u64;
    let mut prev = 0u8;
    for (k, &s) in order.iter().enumerate() {
        let len = lengths[s];
        if len > MAX_CODE_LEN {
            return Err(Error::Malformed(format!(
                "code length {len} exceeds {MAX_CODE_LEN}"
            )));
        }
        if k > 0 {
            code += 1;
        }
        code <<= len - prev;
        prev = len;
        if len < 64 && code >> len != 0 {
            return Err(Error::Malformed(
                "code lengths oversubscribe the code space".into(),
            ));
        }
        codes[s] = (code, len);
    }
    Ok(codes)
}

struct BitWriter {
    out: Vec<u8>,
    acc: u8,
    fill: u8,
    bits: u64,
}

impl BitWriter {
    fn push(&mut self, code: u64, len: u8) {
        for i in (0..len).rev() {
            self.acc = self.acc << 1 | (code >> i & 1) as u8;
            self.fill += 1;
            if self.fill == 8 {
                self.out.push(self.acc);
                self.acc = 0;
                self.fill = 0;
            }
        }
        self.bits += len as u64;
    }

    fn finish(mut self) -> (Vec<u8>, u64) {
        if self.fill > 0 {
            self.out.push(self.acc << (8 - self.fill));
        }
        (self.out, self.bits)
    }
}

pub fn encode(symbols: &[u32]) -> Result<Encoded> {
    let alphabet = symbols.iter().max().map_or(0, |&m| m as usize + 1);
    let mut hist = vec![0u64; alphabet];
    for &s in symbols {
        hist[s as usize] += 1;
    }
    let lengths = code_lengths(&hist);
    let single = hist.iter().filter(|&&c| c > 0).count() == 1;
    if single {
        return Ok(Encoded {
            lengths,
            payload: Vec::new(),
            bits: 0,
        });
    }
    let codes = canonical_codes(&lengths)?;
    let mut w = BitWriter {
        out: Vec::with_capacity(symbols.len()),
        acc: 0,
        fill: 0,
        bits: 0,
    };
    for &s in symbols {
        let (c, l) = codes[s as usize];
        w.push(c, l);
    }
    let (payload, bits) = w.finish();
    Ok(Encoded {
        lengths,
        payload,
        bits,
    })
}

/// Decodes exactly `count` symbols.
pub fn decode(lengths: &[u8], payload: &[u8], count: usize) -> Result<Vec<u32>> {
    let present: Vec<usize> = (0..lengths.len()).filter(|&s| lengths[s] > 0).collect();
    if count == 0 {
        return Ok(Vec::new());
    }
    match present.len() {
        0 => {
            return Err(Error::Malformed(
                "empty codebook for a nonempty stream".into(),
            ))
        }
        1 => return Ok(vec![present[0] as u32; count]),
        _ => {}
    }
    let codes = canonical_codes(lengths)?;
    // Per length: first canonical code and the index of its symbol in the
    // canonical order.
    let max_len = *lengths.iter().max().unwrap() as usize;
    let mut sorted: Vec<usize> = present.clone();
    sorted.sort_by_key(|&s| (lengths[s], s));
    let mut first_code = vec![0u64; max_len + 1];
    let mut first_index = vec![0usize; max_len + 1];
    let mut num = vec![0usize; max_len + 1];
    for (k, &s) in sorted.iter().enumerate() {
        let l = lengths[s] as usize;
        if num[l] == 0 {
            first_code[l] = codes[s].0;
            first_index[l] = k;
        }
        num[l] += 1;
    }
    let total_bits = payload.len() as u64 * 8;
    let mut pos = 0u64;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            if pos >= total_bits || len >= max_len {
                return Err(Error::Malformed("payload ends inside a code".into()));
            }
            let bit = payload[(pos / 8) as usize] >> (7 - pos % 8) & 1;
            pos += 1;
            code = code << 1 | bit as u64;
            len += 1;
            if num[len] > 0 && code >= first_code[len] && code - first_code[len] < num[len] as u64 {
                out.push(sorted[first_index[len] + (code - first_code[len]) as usize] as u32);
                break;
            }
        }
    }
    Ok(out)
}

/// Average code length in bits per symbol.
pub fn mean_code_length(lengths: &[u8], symbols: &[u32]) -> f64 {
    if symbols.is_empty() {
        return 0.0;
    }
    symbols
        .iter()
        .map(|&s| lengths[s as usize] as f64)
        .sum::<f64>()
        / symbols.len() as f64
}
