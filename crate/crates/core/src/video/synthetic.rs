// Seeded procedural clips. Every family draws its per-video layout and
// colours from the seed, then moves a little between frames.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Video;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    MovingBox,
    BouncingBall,
    GradientPan,
    /// Dark background with a bright fan, loosely shaped like an ultrasound
    /// sweep, plus a pulsing blob inside the fan.
    SectorScan,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::MovingBox => "moving_box",
            Family::BouncingBall => "bouncing_ball",
            Family::GradientPan => "gradient_pan",
            Family::SectorScan => "sector_scan",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub seed: u64,
    /// Motion per frame as a fraction of the shorter side.
    pub velocity: f64,
    /// Object size as a fraction of the shorter side.
    pub size: f64,
    /// Foreground/background separation in `[0, 1]`.
    pub contrast: f64,
}

impl SyntheticSpec {
    pub fn new(family: Family, resolution: (usize, usize), n_frames: usize, seed: u64) -> Self {
        SyntheticSpec {
            family,
            height: resolution.0,
            width: resolution.1,
            n_frames,
            seed,
            velocity: 0.03,
            size: 0.35,
            contrast: 0.8,
        }
    }
}

fn coverage(signed_inside: f64) -> f64 {
    (signed_inside + 0.5).clamp(0.0, 1.0)
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Reflects a coordinate travelling freely into `[lo, hi]`.
fn bounce(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

fn render(h: usize, w: usize, mut px: impl FnMut(f64, f64) -> [f64; 3]) -> Tensor {
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let c = px(x as f64 + 0.5, y as f64 + 0.5);
            for ch in 0..3 {
                data[(ch * h + y) * w + x] = c[ch];
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("nonzero resolution")
}

/// Deterministic in `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Video {
    let (h, w) = (spec.height, spec.width);
    let short = h.min(w) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6d65_7461_6e65_7276);
    let bg = random_color(&mut rng, 0.0, 0.35);
    let fg_raw = random_color(&mut rng, 0.55, 1.0);
    let fg = lerp(bg, fg_raw, spec.contrast.clamp(0.0, 1.0) / 0.8).map(|c| c.clamp(0.0, 1.0));
    let angle = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let step = spec.velocity * short;
    let n = spec.n_frames.max(1);

    let frames: Vec<Tensor> = match spec.family {
        Family::MovingBox => {
            let side = (spec.size * short).max(1.0);
            let x0 = rng.random_range(0.0..(w as f64 - side).max(1e-6));
            let y0 = rng.random_range(0.0..(h as f64 - side).max(1e-6));
            (0..n)
                .map(|t| {
                    let bx = bounce(x0 + dx * step * t as f64, 0.0, w as f64 - side);
                    let by = bounce(y0 + dy * step * t as f64, 0.0, h as f64 - side);
                    render(h, w, |x, y| {
                        let inside = (x - bx).min(bx + side - x).min(y - by).min(by + side - y);
                        lerp(bg, fg, coverage(inside))
                    })
                })
                .collect()
        }
        Family::BouncingBall => {
            let r = (spec.size * short * 0.5).max(1.0);
            let cx0 = rng.random_range(r..(w as f64 - r).max(r + 1e-6));
            let cy0 = rng.random_range(r..(h as f64 - r).max(r + 1e-6));
            (0..n)
                .map(|t| {
                    let cx = bounce(cx0 + dx * step * t as f64, r, w as f64 - r);
                    let cy = bounce(cy0 + dy * step * t as f64, r, h as f64 - r);
                    render(h, w, |x, y| {
                        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                        // Radial shading keeps the ball from being a flat disc.
                        let shade = 1.0 - 0.3 * (d / r).min(1.0);
                        lerp(bg, lerp(bg, fg, shade), coverage(r - d))
                    })
                })
                .collect()
        }
        Family::GradientPan => {
            let freq = rng.random_range(0.6..1.6) / short;
            let phase = [
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
            ];
            let amp = 0.5 * spec.contrast.clamp(0.0, 1.0);
            (0..n)
                .map(|t| {
                    let shift = step * t as f64;
                    render(h, w, |x, y| {
                        let u = (x * dx + y * dy - shift) * freq * 2.0 * PI;
                        [0, 1, 2].map(|c| (0.5 + amp * (u + phase[c]).sin()).clamp(0.0, 1.0))
                    })
                })
                .collect()
        }
        Family::SectorScan => {
            let apex = (w as f64 * rng.random_range(0.45..0.55), -0.05 * h as f64);
            let half_angle = rng.random_range(0.45..0.65);
            let (r_in, r_out) = (0.15 * h as f64, rng.random_range(0.9..1.05) * h as f64);
            let gain = rng.random_range(0.55..0.8) * spec.contrast.clamp(0.0, 1.0) / 0.8;
            let speckle_freq = [rng.random_range(0.5..0.9), rng.random_range(0.7..1.2)];
            let blob_r = (spec.size * short * 0.4).max(1.0);
            let blob_c = (
                apex.0 + rng.random_range(-0.15..0.15) * w as f64,
                rng.random_range(0.4..0.65) * h as f64,
            );
            let beat = rng.random_range(0.0..2.0 * PI);
            (0..n)
                .map(|t| {
                    let pulse = 1.0 + 0.25 * (beat + spec.velocity * 20.0 * t as f64).sin();
                    render(h, w, |x, y| {
                        let (vx, vy) = (x - apex.0, y - apex.1);
                        let rad = (vx * vx + vy * vy).sqrt();
                        let theta = vx.atan2(vy);
                        let ang_in = (half_angle - theta.abs()) * rad;
                        let fan = coverage(ang_in) * coverage(rad - r_in) * coverage(r_out - rad);
                        let tex = 0.75
                            + 0.25
                                * (speckle_freq[0] * rad).sin()
                                * (speckle_freq[1] * theta * 12.0).cos();
                        let depth = 1.0 - 0.5 * (rad / r_out).min(1.0);
                        let d = ((x - blob_c.0).powi(2) + (y - blob_c.1).powi(2)).sqrt();
                        let blob = coverage(blob_r * pulse - d);
                        let v = (fan * gain * tex * depth * (1.0 - 0.7 * blob)).clamp(0.0, 1.0);
                        [v, v, v]
                    })
                })
                .collect()
        }
    };
    Video::new(format!("{}-{}", spec.family, spec.seed), frames)
        .expect("generated frames are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn deterministic_in_spec() {
        for fam in [
            Family::MovingBox,
            Family::BouncingBall,
            Family::GradientPan,
            Family::SectorScan,
        ] {
            let s = SyntheticSpec::new(fam, (40, 48), 4, 17);
            assert_eq!(generate_synthetic(&s), generate_synthetic(&s));
        }
    }

    #[test]
    fn static_box_when_velocity_zero() {
        let mut s = SyntheticSpec::new(Family::MovingBox, (40, 48), 5, 3);
        s.velocity = 0.0;
        let v = generate_synthetic(&s);
        assert!(v.frames().windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn bouncing_ball_moves_a_little() {
        let v = generate_synthetic(&SyntheticSpec::new(Family::BouncingBall, (40, 48), 8, 5));
        for p in v.frames().windows(2) {
            let d = mean_abs_diff(&p[0], &p[1]);
            assert!(d > 0.0 && d < 0.1, "{d}");
        }
    }

    #[test]
    fn sector_scan_is_dark_outside_the_fan() {
        let v = generate_synthetic(&SyntheticSpec::new(Family::SectorScan, (40, 48), 2, 8));
        let f = &v.frames()[0];
        // Top-left and top-right corners lie outside the fan.
        assert_eq!(f.data()[0], 0.0);
        assert_eq!(f.data()[47], 0.0);
        assert!(f.data().iter().any(|&s| s > 0.2));
    }

    #[test]
    fn bounce_reflects() {
        assert_eq!(bounce(12.0, 0.0, 10.0), 8.0);
        assert_eq!(bounce(-3.0, 0.0, 10.0), 3.0);
        assert_eq!(bounce(5.0, 0.0, 10.0), 5.0);
    }
}
