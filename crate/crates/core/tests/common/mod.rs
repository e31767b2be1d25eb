// Direct-summation references and finite-difference helpers shared by the
// integration tests. Nothing here calls the library's filtering or pooling
// code.
#![allow(dead_code)]

use metanerv::tensor::{Tape, Tensor, Var};
use metanerv::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values with magnitude in `[lo, hi]` and random sign.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(lo..hi) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Builds `sum(r * op(inputs))` on a fresh tape.
fn projected(
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    r: Option<&Tensor>,
    grad: bool,
) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            if grad {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = match r {
        Some(r) => {
            let rv = tape.constant(r.clone());
            let p = tape.mul(out, rv).unwrap();
            tape.sum(p).unwrap()
        }
        None => out,
    };
    let value = tape.value(loss).data()[0];
    if !grad {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.get_or_zeros(*v, t.len()))
        .collect();
    (value, grads)
}

/// Relative error between the analytic directional derivative of
/// `sum(r * op(x))` along a random direction and its central difference.
/// Scalar outputs are used as-is.
pub fn directional_check(
    rng: &mut ChaCha8Rng,
    build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
) -> f64 {
    let (out_shape, scalar) = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let v = build(&mut tape, &vars).unwrap();
        (tape.value(v).shape().to_vec(), tape.value(v).is_scalar())
    };
    let r = if scalar {
        None
    } else {
        Some(random_tensor(rng, &out_shape, -1.0, 1.0))
    };
    let dirs: Vec<Tensor> = inputs
        .iter()
        .map(|t| random_tensor(rng, t.shape(), -1.0, 1.0))
        .collect();
    let (_, grads) = projected(build, inputs, r.as_ref(), true);
    let analytic: f64 = grads
        .iter()
        .zip(&dirs)
        .map(|(g, d)| g.iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let shifted = |sign: f64| -> Vec<Tensor> {
        inputs
            .iter()
            .zip(&dirs)
            .map(|(t, d)| {
                Tensor::new(
                    t.shape().to_vec(),
                    t.data()
                        .iter()
                        .zip(d.data())
                        .map(|(x, v)| x + sign * FD_EPS * v)
                        .collect(),
                )
                .unwrap()
            })
            .collect()
    };
    let (fp, _) = projected(build, &shifted(1.0), r.as_ref(), false);
    let (fm, _) = projected(build, &shifted(-1.0), r.as_ref(), false);
    rel_err(analytic, (fp - fm) / (2.0 * FD_EPS))
}

/// Same-padded cross-correlation, one output sample at a time.
pub fn conv2d_direct(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as isize;
    let mut out = vec![0.0; co * h * wd];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b.data()[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - p;
                            let sx = xx as isize + kx as isize - p;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            acc += w.data()[((o * ci + c) * k + ky) * k + kx]
                                * x.data()[(c * h + sy as usize) * wd + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * wd + xx] = acc;
            }
        }
    }
    Tensor::new(vec![co, h, wd], out).unwrap()
}

pub fn window_2d(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let r = (size / 2) as f64;
    let mut w = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
            *v = (-d2 / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    w.iter_mut()
        .for_each(|row| row.iter_mut().for_each(|v| *v /= total));
    w
}

/// `(mean SSIM, mean contrast-structure)` over channels and valid windows.
#[allow(clippy::needless_range_loop)]
pub fn ssim_direct(
    x: &Tensor,
    y: &Tensor,
    size: usize,
    sigma: f64,
    c1: f64,
    c2: f64,
) -> (f64, f64) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let win = window_2d(size, sigma);
    let at = |t: &Tensor, ch: usize, i: usize, j: usize| t.data()[(ch * h + i) * w + j];
    let (mut s_sum, mut cs_sum, mut n) = (0.0, 0.0, 0usize);
    for ch in 0..c {
        for oy in 0..=h - size {
            for ox in 0..=w - size {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let g = win[i][j];
                        let (a, b) = (at(x, ch, oy + i, ox + j), at(y, ch, oy + i, ox + j));
                        mx += g * a;
                        my += g * b;
                        sxx += g * a * a;
                        syy += g * b * b;
                        sxy += g * a * b;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                let cs = (2.0 * cov + c2) / (vx + vy + c2);
                let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                s_sum += lum * cs;
                cs_sum += cs;
                n += 1;
            }
        }
    }
    (s_sum / n as f64, cs_sum / n as f64)
}

pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64
}

/// Block-average over `f x f` cells.
pub fn pool_direct(x: &Tensor, f: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for di in 0..f {
                    for dj in 0..f {
                        acc += x.data()[(ch * h + i * f + di) * w + j * f + dj];
                    }
                }
                out[(ch * oh + i) * ow + j] = acc / (f * f) as f64;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

pub fn fusion_direct(
    pred: &Tensor,
    gt: &Tensor,
    alpha: f64,
    size: usize,
    sigma: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    alpha * mean_abs_diff(pred, gt)
        + (1.0 - alpha) * (1.0 - ssim_direct(pred, gt, size, sigma, c1, c2).0)
}

fn halve(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let s = |di: usize, dj: usize| x.data()[(ch * h + 2 * i + di) * w + 2 * j + dj];
                out[(ch * oh + i) * ow + j] = (s(0, 0) + s(0, 1) + s(1, 0) + s(1, 1)) / 4.0;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

pub fn ms_ssim_direct(x: &Tensor, y: &Tensor, size: usize, sigma: f64, c1: f64, c2: f64) -> f64 {
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let mut shapes = vec![];
    let (mut h, mut w) = (x.shape()[1], x.shape()[2]);
    while shapes.len() < 5 && h >= size && w >= size {
        shapes.push((h, w));
        h /= 2;
        w /= 2;
    }
    let used = &weights[..shapes.len()];
    let total: f64 = used.iter().sum();
    let (mut a, mut b) = (x.clone(), y.clone());
    let mut out = 1.0;
    for (l, wl) in used.iter().enumerate() {
        let (s, cs) = ssim_direct(&a, &b, size, sigma, c1, c2);
        let term = if l + 1 == used.len() { s } else { cs };
        out *= term.max(0.0).powf(wl / total);
        a = halve(&a);
        b = halve(&b);
    }
    out
}
