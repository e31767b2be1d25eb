//! Reconstruction objectives and quality metrics.
//!
//! Differentiable terms are built on a [`Tape`]; the metric helpers at the
//! bottom evaluate the same formulas on plain tensors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gaussian_kernel_1d, Tape, Tensor, Var};

/// Canonical five-scale MS-SSIM exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// PSNR reported when the MSE is below `1e-10`.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the L1 term; `1 - alpha` weighs `1 - SSIM`.
    pub alpha: f64,
    /// Per-header weights, coarse to fine. `None` means uniform `1/K`.
    pub head_weights: Option<Vec<f64>>,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.7,
            head_weights: None,
            ssim_window: 7,
            ssim_sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    /// Supervises only the final, full-resolution header.
    pub fn final_only(mut self, heads: usize) -> Self {
        let mut w = vec![0.0; heads];
        w[heads - 1] = 1.0;
        self.head_weights = Some(w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.ssim_window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "ssim window {} must be odd",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma > 0.0) {
            return Err(Error::InvalidConfig("ssim sigma must be positive".into()));
        }
        if let Some(w) = &self.head_weights {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "head weights {w:?} must be nonnegative and sum to 1"
                )));
            }
        }
        Ok(())
    }

    pub fn resolved_head_weights(&self, heads: usize) -> Result<Vec<f64>> {
        match &self.head_weights {
            None => Ok(vec![1.0 / heads as f64; heads]),
            Some(w) if w.len() == heads => Ok(w.clone()),
            Some(w) => Err(Error::InvalidConfig(format!(
                "{} head weights for {heads} heads",
                w.len()
            ))),
        }
    }

    fn taps(&self) -> Arc<[f64]> {
        gaussian_kernel_1d(self.ssim_window, self.ssim_sigma).into()
    }
}

pub fn l1_loss(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let d = tape.sub(pred, gt)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

struct SsimTerms {
    ssim: Var,
    cs: Option<Var>,
}

fn ssim_terms(
    tape: &mut Tape,
    x: Var,
    y: Var,
    cfg: &LossConfig,
    with_cs: bool,
) -> Result<SsimTerms> {
    if tape.shape(x) != tape.shape(y) {
        return Err(Error::ShapeMismatch(format!(
            "ssim of {:?} and {:?}",
            tape.shape(x),
            tape.shape(y)
        )));
    }
    let (_, h, w) = tape.value(x).chw()?;
    if cfg.ssim_window > h || cfg.ssim_window > w {
        return Err(Error::WindowTooLarge {
            window: cfg.ssim_window,
            height: h,
            width: w,
        });
    }
    let taps = cfg.taps();
    let mu_x = tape.gaussian_filter(x, Arc::clone(&taps))?;
    let mu_y = tape.gaussian_filter(y, Arc::clone(&taps))?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let e_xx = tape.gaussian_filter(xx, Arc::clone(&taps))?;
    let e_yy = tape.gaussian_filter(yy, Arc::clone(&taps))?;
    let e_xy = tape.gaussian_filter(xy, taps)?;
    let mu_xx = tape.mul(mu_x, mu_x)?;
    let mu_yy = tape.mul(mu_y, mu_y)?;
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = tape.sub(e_xx, mu_xx)?;
    let var_y = tape.sub(e_yy, mu_yy)?;
    let cov = tape.sub(e_xy, mu_xy)?;

    let lum_num = tape.scale(mu_xy, 2.0)?;
    let lum_num = tape.add_scalar(lum_num, cfg.c1)?;
    let lum_den = tape.add(mu_xx, mu_yy)?;
    let lum_den = tape.add_scalar(lum_den, cfg.c1)?;
    let cs_num = tape.scale(cov, 2.0)?;
    let cs_num = tape.add_scalar(cs_num, cfg.c2)?;
    let cs_den = tape.add(var_x, var_y)?;
    let cs_den = tape.add_scalar(cs_den, cfg.c2)?;

    let num = tape.mul(lum_num, cs_num)?;
    let den = tape.mul(lum_den, cs_den)?;
    let map = tape.div(num, den)?;
    let ssim = tape.mean(map)?;
    let cs = if with_cs {
        let cs_map = tape.div(cs_num, cs_den)?;
        Some(tape.mean(cs_map)?)
    } else {
        None
    };
    Ok(SsimTerms { ssim, cs })
}

/// Mean Gaussian-windowed SSIM over valid window positions and channels.
pub fn ssim(tape: &mut Tape, x: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    Ok(ssim_terms(tape, x, y, cfg, false)?.ssim)
}

/// `alpha * L1 + (1 - alpha) * (1 - SSIM)`. A term with zero weight is not
/// evaluated.
pub fn fusion_loss(tape: &mut Tape, pred: Var, gt: Var, cfg: &LossConfig) -> Result<Var> {
    let a = cfg.alpha;
    let l1 = if a > 0.0 {
        let l = l1_loss(tape, pred, gt)?;
        Some(tape.scale(l, a)?)
    } else {
        None
    };
    let structural = if a < 1.0 {
        let s = ssim(tape, pred, gt, cfg)?;
        let d = tape.scale(s, -1.0)?;
        let d = tape.add_scalar(d, 1.0)?;
        Some(tape.scale(d, 1.0 - a)?)
    } else {
        None
    };
    match (l1, structural) {
        (Some(l), Some(s)) => tape.add(l, s),
        (Some(l), None) => Ok(l),
        (None, Some(s)) => Ok(s),
        (None, None) => unreachable!("alpha is either positive or below one"),
    }
}

/// Average-pools a full-resolution frame down to `(h, w)`.
pub fn pool_gt(gt: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (_, h, w) = gt.chw()?;
    let (th, tw) = target;
    let err = Error::NonIntegerFactor {
        from_h: h,
        from_w: w,
        to_h: th,
        to_w: tw,
    };
    if th == 0 || tw == 0 || h % th != 0 || w % tw != 0 || h / th != w / tw {
        return Err(err);
    }
    let f = h / th;
    if f == 1 {
        return Ok(gt.clone());
    }
    gt.avg_pool2d(f)
}

/// Weighted sum over headers of the fusion loss against the pooled target.
pub fn multires_loss(tape: &mut Tape, heads: &[Var], gt: &Tensor, cfg: &LossConfig) -> Result<Var> {
    let weights = cfg.resolved_head_weights(heads.len())?;
    let mut total: Option<Var> = None;
    for (&head, &wk) in heads.iter().zip(&weights) {
        if wk == 0.0 {
            continue;
        }
        let (_, h, w) = tape.value(head).chw()?;
        let target = tape.constant(pool_gt(gt, (h, w))?);
        let l = fusion_loss(tape, head, target, cfg)?;
        let l = tape.scale(l, wk)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::InvalidConfig("all head weights are zero".into()))
}

fn two_constants(x: &Tensor, y: &Tensor) -> Result<(Tape, Var, Var)> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let mut tape = Tape::new();
    let a = tape.constant(x.clone());
    let b = tape.constant(y.clone());
    Ok((tape, a, b))
}

pub fn ssim_value(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let (mut tape, a, b) = two_constants(x, y)?;
    let s = ssim(&mut tape, a, b, cfg)?;
    Ok(tape.value(s).data()[0])
}

pub fn fusion_loss_value(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let (mut tape, a, b) = two_constants(pred, gt)?;
    let l = fusion_loss(&mut tape, a, b, cfg)?;
    Ok(tape.value(l).data()[0])
}

pub fn mse(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / pred.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`.
pub fn psnr(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?))
}

/// Mean per-frame PSNR.
pub fn psnr_frames(pred: &[Tensor], gt: &[Tensor]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} frames",
            pred.len(),
            gt.len()
        )));
    }
    let mut acc = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        acc += psnr(p, g)?;
    }
    Ok(acc / pred.len() as f64)
}

/// Number of dyadic scales (at most five) whose frame still fits the window.
pub fn ms_ssim_levels(h: usize, w: usize, window: usize) -> usize {
    let (mut h, mut w) = (h, w);
    let mut n = 0;
    while n < MS_SSIM_WEIGHTS.len() && h >= window && w >= window {
        n += 1;
        h /= 2;
        w /= 2;
    }
    n
}

/// Halves resolution by 2x2 averaging, dropping a trailing odd row/column.
fn dyadic_downsample(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let (eh, ew) = (h - h % 2, w - w % 2);
    let cropped = if (eh, ew) == (h, w) {
        x.clone()
    } else {
        let mut data = Vec::with_capacity(c * eh * ew);
        for ch in 0..c {
            for y in 0..eh {
                let row = (ch * h + y) * w;
                data.extend_from_slice(&x.data()[row..row + ew]);
            }
        }
        Tensor::new(vec![c, eh, ew], data)?
    };
    cropped.avg_pool2d(2)
}

/// Multiscale SSIM with the canonical weights renormalized over the scales
/// that fit the window. Per-scale terms are clamped at zero before
/// exponentiation.
pub fn ms_ssim(x: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (_, h, w) = x.chw()?;
    let levels = ms_ssim_levels(h, w, cfg.ssim_window);
    if levels == 0 {
        return Err(Error::WindowTooLarge {
            window: cfg.ssim_window,
            height: h,
            width: w,
        });
    }
    let weights = &MS_SSIM_WEIGHTS[..levels];
    let wsum: f64 = weights.iter().sum();
    let (mut a, mut b) = (x.clone(), y.clone());
    let mut out = 1.0;
    for (l, &wl) in weights.iter().enumerate() {
        let last = l + 1 == levels;
        let (mut tape, va, vb) = two_constants(&a, &b)?;
        let terms = ssim_terms(&mut tape, va, vb, cfg, !last)?;
        let term = if last {
            tape.value(terms.ssim).data()[0]
        } else {
            tape.value(terms.cs.unwrap()).data()[0]
        };
        out *= term.max(0.0).powf(wl / wsum);
        if !last {
            a = dyadic_downsample(&a)?;
            b = dyadic_downsample(&b)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::new(vec![3, h, w], (0..3 * h * w).map(f).collect()).unwrap()
    }

    fn l1(p: &Tensor, g: &Tensor) -> f64 {
        let mut t = Tape::new();
        let (a, b) = (t.constant(p.clone()), t.constant(g.clone()));
        let l = l1_loss(&mut t, a, b).unwrap();
        t.value(l).data()[0]
    }

    #[test]
    fn l1_examples() {
        let z = frame(2, 2, |_| 0.0);
        let o = frame(2, 2, |_| 1.0);
        assert_eq!(l1(&z, &z), 0.0);
        assert_eq!(l1(&o, &z), 1.0);
        let p = Tensor::new(vec![1, 1, 2], vec![0.2, 0.8]).unwrap();
        let g = Tensor::new(vec![1, 1, 2], vec![0.5, 0.5]).unwrap();
        assert!((l1(&p, &g) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ssim_self_and_symmetry() {
        let cfg = LossConfig::default();
        let x = frame(12, 10, |i| ((i * 37) % 101) as f64 / 100.0);
        let y = frame(12, 10, |i| ((i * 53 + 7) % 97) as f64 / 96.0);
        assert!((ssim_value(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-9);
        let (a, b) = (
            ssim_value(&x, &y, &cfg).unwrap(),
            ssim_value(&y, &x, &cfg).unwrap(),
        );
        assert!((a - b).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn ssim_window_too_large() {
        let cfg = LossConfig::default();
        let x = frame(5, 9, |_| 0.5);
        assert!(matches!(
            ssim_value(&x, &x, &cfg),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn fusion_degenerate_weights_are_exact() {
        let x = frame(8, 8, |i| ((i * 13) % 17) as f64 / 16.0);
        let y = frame(8, 8, |i| ((i * 7 + 3) % 11) as f64 / 10.0);
        let mut cfg = LossConfig::default();
        assert_eq!(fusion_loss_value(&x, &x, &cfg).unwrap(), 0.0);
        cfg.alpha = 1.0;
        assert_eq!(fusion_loss_value(&x, &y, &cfg).unwrap(), l1(&x, &y));
        cfg.alpha = 0.0;
        assert_eq!(
            fusion_loss_value(&x, &y, &cfg).unwrap(),
            1.0 - ssim_value(&x, &y, &cfg).unwrap()
        );
    }

    #[test]
    fn pool_gt_cases() {
        let x = frame(8, 6, |i| i as f64 / 144.0);
        assert_eq!(pool_gt(&x, (8, 6)).unwrap(), x);
        let c = frame(16, 12, |_| 0.3);
        let p = pool_gt(&c, (4, 3)).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert!(matches!(
            pool_gt(&x, (3, 3)),
            Err(Error::NonIntegerFactor { .. })
        ));
        assert!(matches!(
            pool_gt(&x, (4, 2)),
            Err(Error::NonIntegerFactor { .. })
        ));
        let big = Tensor::zeros(&[3, 240, 320]);
        assert_eq!(pool_gt(&big, (15, 20)).unwrap().shape(), &[3, 15, 20]);
    }

    #[test]
    fn psnr_examples() {
        let z = frame(4, 4, |_| 0.0);
        let tenth = frame(4, 4, |_| 0.1);
        let one = frame(4, 4, |_| 1.0);
        assert!((psnr(&tenth, &z).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&z, &z).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&one, &z).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ms_ssim_truncation() {
        assert_eq!(ms_ssim_levels(16, 16, 7), 2);
        assert_eq!(ms_ssim_levels(40, 48, 7), 3);
        assert_eq!(ms_ssim_levels(240, 320, 11), 5);
        let x = frame(16, 16, |i| ((i * 31) % 29) as f64 / 28.0);
        assert!((ms_ssim(&x, &x, &LossConfig::default()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn head_weight_validation() {
        let cfg = LossConfig { head_weights: Some(vec![0.5, 0.6]), ..LossConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = LossConfig::default().final_only(3);
        assert_eq!(cfg.resolved_head_weights(3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(cfg.validate().is_ok());
    }
}
