//! Frame sequences: the unit a task is built from.

mod io;
mod synthetic;

pub use io::{load_video, save_png_dir, save_raw, save_video, RAW_MAGIC};
pub use synthetic::{generate_synthetic, Family, SyntheticSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N >= 1` frames of shape `3 x H x W` with samples in `[0, 1]`.
///
/// Samples are held at f32 precision so the raw container round-trips
/// bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    id: String,
    frames: Vec<Tensor>,
    fps: Option<f64>,
}

fn sanitize(v: f64) -> f64 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    v as f32 as f64
}

impl Video {
    pub fn new(id: impl Into<String>, frames: Vec<Tensor>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyVideo)?;
        let (c, h, w) = first.chw()?;
        if c != 3 {
            return Err(Error::InvalidShape(format!(
                "frames need 3 channels, got {c}"
            )));
        }
        let frames = frames
            .into_iter()
            .map(|f| {
                if f.shape() != [3, h, w] {
                    return Err(Error::ShapeMismatch(format!(
                        "frame {:?} in a 3x{h}x{w} video",
                        f.shape()
                    )));
                }
                Ok(f.map(sanitize))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Video {
            id: id.into(),
            frames,
            fps: None,
        })
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        self.fps = Some(fps);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn fps(&self) -> Option<f64> {
        self.fps
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Total pixel count `H * W * N`.
    pub fn pixels(&self) -> usize {
        self.height() * self.width() * self.len()
    }

    /// First `t` frames (clamped to `[1, N]`).
    pub fn prefix(&self, t: usize) -> Video {
        let t = t.clamp(1, self.len());
        Video {
            id: self.id.clone(),
            frames: self.frames[..t].to_vec(),
            fps: self.fps,
        }
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every sample, then clamps to `[0, 1]`.
pub fn add_noise(video: &Video, sigma: f64, seed: u64) -> Result<Video> {
    if !(sigma >= 0.0) {
        return Err(Error::DomainError(format!(
            "noise sigma {sigma} must be >= 0"
        )));
    }
    if sigma == 0.0 {
        return Ok(video.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::DomainError(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = video
        .frames
        .iter()
        .map(|f| {
            let data = f
                .data()
                .iter()
                .map(|&v| v + normal.sample(&mut rng))
                .collect();
            Tensor::new(f.shape().to_vec(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Video::new(video.id.clone(), frames)?;
    out.fps = video.fps;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64, n: usize) -> Video {
        Video::new("c", vec![Tensor::full(&[3, 40, 48], v); n]).unwrap()
    }

    #[test]
    fn invariants_enforced() {
        assert!(matches!(Video::new("e", vec![]), Err(Error::EmptyVideo)));
        let mixed = vec![Tensor::zeros(&[3, 4, 4]), Tensor::zeros(&[3, 4, 5])];
        assert!(Video::new("m", mixed).is_err());
        let v = Video::new("x", vec![Tensor::full(&[3, 2, 2], 1.7)]).unwrap();
        assert!(v.frames()[0].data().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn zero_noise_is_identity() {
        let v = constant(0.5, 2);
        assert_eq!(add_noise(&v, 0.0, 3).unwrap(), v);
    }

    #[test]
    fn noise_statistics_and_range() {
        let v = constant(0.5, 20);
        let n = add_noise(&v, 0.1, 9).unwrap();
        let samples: Vec<f64> = n
            .frames()
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .collect();
        assert!(samples.len() >= 100_000);
        assert!(samples.iter().all(|s| (0.0..=1.0).contains(s)));
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        let std = var.sqrt();
        assert!((0.09..=0.11).contains(&std), "std {std}");
        assert_eq!(add_noise(&v, 0.1, 9).unwrap(), n);
    }

    #[test]
    fn prefix_clamps() {
        let v = constant(0.2, 8);
        assert_eq!(v.prefix(5).len(), 5);
        assert_eq!(v.prefix(100).len(), 8);
    }
}
