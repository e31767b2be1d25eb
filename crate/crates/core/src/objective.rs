//! Flat-parameter objectives consumed by the inner/outer loops.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{multires_loss, LossConfig};
use crate::model::{forward_on_tape, ModelParams};
use crate::tensor::{Tape, Tensor};
use crate::video::Video;

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Mean multi-resolution loss over a set of frames of one video.
///
/// Frame times are normalized against the length of the whole video, so a
/// prefix clip keeps the timestamps its frames have in the full sequence.
pub struct VideoObjective<'a> {
    template: &'a ModelParams,
    loss: &'a LossConfig,
    frames: Vec<(f64, &'a Tensor)>,
}

pub struct Evaluation {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Full-resolution reconstructions, in frame order.
    pub frames: Vec<Tensor>,
}

impl<'a> VideoObjective<'a> {
    /// Uses the first `t` frames of `video` (all of them when `t >= N`).
    pub fn new(
        template: &'a ModelParams,
        loss: &'a LossConfig,
        video: &'a Video,
        t: usize,
    ) -> Result<Self> {
        let cfg = template.config();
        if video.resolution() != cfg.output_resolution() {
            return Err(Error::ShapeMismatch(format!(
                "video is {:?}, model emits {:?}",
                video.resolution(),
                cfg.output_resolution()
            )));
        }
        let n = video.len();
        let frames = video.frames()[..t.clamp(1, n)]
            .iter()
            .enumerate()
            .map(|(i, f)| (cfg.t_norm.time(i, n), f))
            .collect();
        Ok(VideoObjective {
            template,
            loss,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    fn frame_pass(
        &self,
        params: &ModelParams,
        t: f64,
        gt: &Tensor,
    ) -> Result<(f64, Vec<f64>, Tensor)> {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let heads = forward_on_tape(&mut tape, params.config(), &vars, t)?;
        let loss = multires_loss(&mut tape, &heads, gt, self.loss)?;
        let grads = tape.backward(loss)?;
        let mut flat = Vec::with_capacity(params.len());
        for (v, e) in vars.iter().zip(params.layout().entries()) {
            match grads.get(*v) {
                Some(g) => flat.extend_from_slice(g),
                None => flat.extend(std::iter::repeat_n(0.0, e.len())),
            }
        }
        let out = tape.value(*heads.last().unwrap()).clone();
        Ok((tape.value(loss).data()[0], flat, out))
    }

    /// Loss, gradient and reconstructions at `params`. Frames are processed
    /// in parallel and reduced in frame order.
    pub fn evaluate(&self, params: &[f64]) -> Result<Evaluation> {
        let p = self.template.with_flat(params.to_vec())?;
        let per_frame: Vec<(f64, Vec<f64>, Tensor)> = self
            .frames
            .par_iter()
            .map(|&(t, gt)| self.frame_pass(&p, t, gt))
            .collect::<Result<_>>()?;
        let inv = 1.0 / per_frame.len() as f64;
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        let mut frames = Vec::with_capacity(per_frame.len());
        for (l, g, f) in per_frame {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            frames.push(f);
        }
        grad.iter_mut().for_each(|v| *v *= inv);
        Ok(Evaluation {
            loss: loss * inv,
            grad,
            frames,
        })
    }
}

impl Objective for VideoObjective<'_> {
    fn dim(&self) -> usize {
        self.template.len()
    }

    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate(params)?;
        Ok((e.loss, e.grad))
    }
}

/// Renders every frame of an `n`-frame video in parallel.
pub fn render_video(params: &ModelParams, n: usize) -> Result<Vec<Tensor>> {
    let tn = params.config().t_norm;
    (0..n)
        .into_par_iter()
        .map(|i| params.render(tn.time(i, n)))
        .collect()
}
