// Raw forward/backward loops over flat row-major buffers. Shape checks live in
// the tape; these functions assume valid dimensions.

use crate::error::{Error, Result};

pub(crate) const GELU_K0: f64 = 0.797_884_560_8;
pub(crate) const GELU_K1: f64 = 0.044_715;

pub(crate) fn matmul_fwd(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Gradient of `a` for `c = a b`: `g b^T`.
pub(crate) fn matmul_bwd_a(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    da
}

/// Gradient of `b` for `c = a b`: `a^T g`.
pub(crate) fn matmul_bwd_b(g: &[f64], a: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let drow = &mut db[p * n..(p + 1) * n];
            for (d, &gv) in drow.iter_mut().zip(grow) {
                *d += av * gv;
            }
        }
    }
    db
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k as isize - 1) / 2
    }

    /// Valid output range along one axis for kernel offset `d`.
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).min(len as isize).max(0) as usize;
        (lo, hi.max(lo))
    }
}

/// Same-padded cross-correlation plus bias.
pub(crate) fn conv2d_fwd(x: &[f64], wt: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let ConvDims {
        c_in,
        c_out,
        h,
        w,
        k,
    } = d;
    let pad = d.pad();
    let plane = h * w;
    let mut out = vec![0.0; c_out * plane];
    for o in 0..c_out {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..c_in {
            let src = &x[i * plane..(i + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = ConvDims::span(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = ConvDims::span(w, dx);
                    let wv = wt[((o * c_in + i) * k + ky) * k + kx];
                    if wv == 0.0 || x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let srow = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        for (dv, &sv) in drow.iter_mut().zip(srow) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn conv2d_bwd(
    g: &[f64],
    x: &[f64],
    wt: &[f64],
    d: ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads {
    let ConvDims {
        c_in,
        c_out,
        h,
        w,
        k,
    } = d;
    let pad = d.pad();
    let plane = h * w;
    let mut dx = need.0.then(|| vec![0.0; c_in * plane]);
    let mut dw = need.1.then(|| vec![0.0; c_out * c_in * k * k]);
    let db = need.2.then(|| {
        (0..c_out)
            .map(|o| g[o * plane..(o + 1) * plane].iter().sum())
            .collect()
    });
    if dx.is_some() || dw.is_some() {
        for o in 0..c_out {
            let go = &g[o * plane..(o + 1) * plane];
            for i in 0..c_in {
                let src = &x[i * plane..(i + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = ConvDims::span(h, dy);
                    for kx in 0..k {
                        let dxo = kx as isize - pad;
                        let (x0, x1) = ConvDims::span(w, dxo);
                        if x0 >= x1 {
                            continue;
                        }
                        let widx = ((o * c_in + i) * k + ky) * k + kx;
                        let wv = wt[widx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let soff = sy * w + (x0 as isize + dxo) as usize;
                            let grow = &go[y * w + x0..y * w + x1];
                            if dw.is_some() {
                                let srow = &src[soff..soff + (x1 - x0)];
                                acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(dx) = dx.as_mut() {
                                if wv != 0.0 {
                                    let drow =
                                        &mut dx[i * plane + soff..i * plane + soff + (x1 - x0)];
                                    for (dv, &gv) in drow.iter_mut().zip(grow) {
                                        *dv += wv * gv;
                                    }
                                }
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// `out[c, s*i + p, s*j + q] = in[c*s*s + p*s + q, i, j]`.
pub(crate) fn pixel_shuffle_fwd(x: &[f64], c_out: usize, h: usize, w: usize, s: usize) -> Vec<f64> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; c_out * oh * ow];
    for c in 0..c_out {
        for p in 0..s {
            for q in 0..s {
                let src_c = c * s * s + p * s + q;
                let src = &x[src_c * h * w..(src_c + 1) * h * w];
                for i in 0..h {
                    let orow = (c * oh + s * i + p) * ow;
                    for j in 0..w {
                        out[orow + s * j + q] = src[i * w + j];
                    }
                }
            }
        }
    }
    out
}

/// Inverse rearrangement of [`pixel_shuffle_fwd`]; also its gradient.
pub(crate) fn pixel_shuffle_bwd(g: &[f64], c_out: usize, h: usize, w: usize, s: usize) -> Vec<f64> {
    let (oh, ow) = (h * s, w * s);
    let mut dx = vec![0.0; c_out * s * s * h * w];
    for c in 0..c_out {
        for p in 0..s {
            for q in 0..s {
                let dst_c = c * s * s + p * s + q;
                for i in 0..h {
                    let orow = (c * oh + s * i + p) * ow;
                    for j in 0..w {
                        dx[(dst_c * h + i) * w + j] = g[orow + s * j + q];
                    }
                }
            }
        }
    }
    dx
}

/// Inverse of pixel shuffle on a `C x (s*h) x (s*w)` tensor.
pub fn pixel_unshuffle(x: &super::Tensor, s: usize) -> Result<super::Tensor> {
    let (c, oh, ow) = x.chw()?;
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(Error::InvalidShape(format!(
            "{oh}x{ow} not divisible by {s}"
        )));
    }
    let data = pixel_shuffle_bwd(x.data(), c, oh / s, ow / s, s);
    super::Tensor::new(vec![c * s * s, oh / s, ow / s], data)
}

pub(crate) fn gelu(x: f64) -> f64 {
    let u = GELU_K0 * (x + GELU_K1 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K0 * (x + GELU_K1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K0 * (1.0 + 3.0 * GELU_K1 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_pool(h: usize, w: usize, f: usize) -> Result<()> {
    if f == 0 || !h.is_multiple_of(f) || !w.is_multiple_of(f) {
        return Err(Error::InvalidShape(format!(
            "pool factor {f} does not divide {h}x{w}"
        )));
    }
    Ok(())
}

pub(crate) fn avg_pool_fwd(x: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let inv = 1.0 / (f * f) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            let orow = (ch * oh + y / f) * ow;
            let srow = &x[(ch * h + y) * w..(ch * h + y + 1) * w];
            for (xx, &v) in srow.iter().enumerate() {
                out[orow + xx / f] += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

pub(crate) fn avg_pool_bwd(g: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let inv = 1.0 / (f * f) as f64;
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let grow = (ch * oh + y / f) * ow;
            for xx in 0..w {
                dx[(ch * h + y) * w + xx] = g[grow + xx / f] * inv;
            }
        }
    }
    dx
}

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable valid-mode filtering of each channel with `taps` along both axes.
pub(crate) fn sep_filter_fwd(x: &[f64], c: usize, h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let srow = &src[y * w..(y + 1) * w];
            let trow = &mut tmp[y * ow..(y + 1) * ow];
            for (xx, t) in trow.iter_mut().enumerate() {
                *t = taps.iter().zip(&srow[xx..xx + k]).map(|(a, b)| a * b).sum();
            }
        }
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let drow = &mut dst[y * ow..(y + 1) * ow];
            for (i, &tap) in taps.iter().enumerate() {
                let trow = &tmp[(y + i) * ow..(y + i + 1) * ow];
                for (d, &t) in drow.iter_mut().zip(trow) {
                    *d += tap * t;
                }
            }
        }
    }
    out
}

pub(crate) fn sep_filter_bwd(g: &[f64], c: usize, h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut dtmp = vec![0.0; h * ow];
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        dtmp.iter_mut().for_each(|v| *v = 0.0);
        let gsrc = &g[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let grow = &gsrc[y * ow..(y + 1) * ow];
            for (i, &tap) in taps.iter().enumerate() {
                let trow = &mut dtmp[(y + i) * ow..(y + i + 1) * ow];
                for (t, &gv) in trow.iter_mut().zip(grow) {
                    *t += tap * gv;
                }
            }
        }
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let trow = &dtmp[y * ow..(y + 1) * ow];
            let drow = &mut dst[y * w..(y + 1) * w];
            for (xx, &t) in trow.iter().enumerate() {
                for (j, &tap) in taps.iter().enumerate() {
                    drow[xx + j] += tap * t;
                }
            }
        }
    }
    dx
}
