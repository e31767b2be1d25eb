//! Meta-learning of the initial weights and per-parameter inner learning
//! rates, with the progressive frame schedule and test-time adaptation.
//!
//! Inner loop for a task with objective `L`:
//!
//! ```text
//! phi_0 = theta0
//! phi_i = phi_{i-1} - beta * grad L(phi_{i-1})        i = 1..m
//! ```
//!
//! First-order outer gradients, averaged over the `m` post-step losses
//! `L(phi_i)` and over tasks:
//!
//! ```text
//! d theta0 = mean_i grad L(phi_i)
//! d beta   = -mean_i grad L(phi_i) * grad L(phi_{i-1})
//! ```
//!
//! Both are applied with Adam; `beta` is then clamped to
//! `[BETA_MIN, BETA_MAX]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{ms_ssim, psnr_frames, LossConfig};
use crate::model::ModelParams;
use crate::objective::{Objective, VideoObjective};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;
use crate::video::Video;

pub const BETA_MIN: f64 = 1e-6;
pub const BETA_MAX: f64 = 1.0;
/// Fixed step size for adapting a randomly initialized model.
pub const DEFAULT_BASELINE_LR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    #[default]
    FirstOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub outer_lr: f64,
    pub grad_mode: GradMode,
    pub beta_init: f64,
    /// Limit outer iteration `j` to the first `min(j * progress_rate, N)`
    /// frames.
    pub progressive: bool,
    pub progress_rate: usize,
    pub tasks_per_step: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_steps: 3,
            outer_steps: 500,
            outer_lr: 1e-4,
            grad_mode: GradMode::FirstOrder,
            beta_init: 1e-2,
            progressive: true,
            progress_rate: 1,
            tasks_per_step: 1,
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_steps < 1 {
            return Err(Error::InvalidConfig("outer_steps must be >= 1".into()));
        }
        if !(self.outer_lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "outer_lr {} must be positive",
                self.outer_lr
            )));
        }
        if self.tasks_per_step < 1 || self.progress_rate < 1 {
            return Err(Error::InvalidConfig(
                "tasks_per_step and progress_rate must be >= 1".into(),
            ));
        }
        if !(BETA_MIN..=BETA_MAX).contains(&self.beta_init) {
            return Err(Error::InvalidConfig(format!(
                "beta_init {} outside [{BETA_MIN}, {BETA_MAX}]",
                self.beta_init
            )));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    pub theta0: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta_opt: AdamState,
    pub beta_opt: AdamState,
    /// Completed outer steps.
    pub outer_iter: u64,
}

impl MetaState {
    pub fn new(theta0: Vec<f64>, beta_init: f64) -> Self {
        let n = theta0.len();
        MetaState {
            theta0,
            beta: vec![beta_init.clamp(BETA_MIN, BETA_MAX); n],
            theta_opt: AdamState::new(n),
            beta_opt: AdamState::new(n),
            outer_iter: 0,
        }
    }

    pub fn theta0_params(&self, template: &ModelParams) -> Result<ModelParams> {
        template.with_flat(self.theta0.clone())
    }
}

/// Step size used by the inner update.
#[derive(Clone, Copy, Debug)]
pub enum InnerRate<'a> {
    PerParam(&'a [f64]),
    Scalar(f64),
}

impl InnerRate<'_> {
    fn apply(&self, phi: &mut [f64], grad: &[f64]) {
        match *self {
            InnerRate::PerParam(beta) => {
                for ((p, g), b) in phi.iter_mut().zip(grad).zip(beta) {
                    *p -= b * g;
                }
            }
            InnerRate::Scalar(lr) => phi.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    pub phi_m: Vec<f64>,
    /// `L(phi_{i-1})` for `i = 1..m`, the loss each inner step descends.
    pub losses: Vec<f64>,
    /// `L(phi_m)`, present when `m > 0`.
    pub final_loss: Option<f64>,
    /// `grad L(phi_i)` for `i = 0..=m` (empty when `m = 0`).
    pub grads: Vec<Vec<f64>>,
}

impl InnerResult {
    /// `mean_i grad L(phi_i)` over `i = 1..m`; zeros when `m = 0`.
    pub fn theta_grad(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        let m = self.grads.len().saturating_sub(1);
        if m == 0 {
            return out;
        }
        for g in &self.grads[1..] {
            out.iter_mut().zip(g).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        out
    }

    /// `-mean_i grad L(phi_i) * grad L(phi_{i-1})` over `i = 1..m`.
    pub fn beta_grad(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        let m = self.grads.len().saturating_sub(1);
        if m == 0 {
            return out;
        }
        for pair in self.grads.windows(2) {
            for ((o, post), prev) in out.iter_mut().zip(&pair[1]).zip(&pair[0]) {
                *o -= post * prev;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        out
    }
}

fn checked(step: usize, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss { step, value: loss })
    }
}

/// Runs `m` plain gradient steps from `theta0`, then evaluates the gradient
/// at `phi_m` for the outer update.
pub fn inner_loop(
    theta0: &[f64],
    rate: InnerRate<'_>,
    objective: &impl Objective,
    m: usize,
) -> Result<InnerResult> {
    let mut phi = theta0.to_vec();
    let mut losses = Vec::with_capacity(m);
    let mut grads = Vec::with_capacity(m + 1);
    for i in 1..=m {
        let (l, g) = objective.loss_and_grad(&phi)?;
        losses.push(checked(i, l)?);
        rate.apply(&mut phi, &g);
        grads.push(g);
    }
    let final_loss = if m > 0 {
        let (l, g) = objective.loss_and_grad(&phi)?;
        grads.push(g);
        Some(checked(m + 1, l)?)
    } else {
        None
    };
    Ok(InnerResult {
        phi_m: phi,
        losses,
        final_loss,
        grads,
    })
}

/// One meta-update from the given tasks, reduced in list order.
pub fn outer_step<O: Objective>(
    state: &mut MetaState,
    tasks: &[O],
    cfg: &MetaConfig,
) -> Result<Vec<InnerResult>> {
    if tasks.is_empty() {
        return Err(Error::InvalidConfig(
            "outer step needs at least one task".into(),
        ));
    }
    let dim = state.theta0.len();
    let mut results = Vec::with_capacity(tasks.len());
    let mut d_theta = vec![0.0; dim];
    let mut d_beta = vec![0.0; dim];
    for task in tasks {
        if task.dim() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: task.dim(),
            });
        }
        let r = inner_loop(
            &state.theta0,
            InnerRate::PerParam(&state.beta),
            task,
            cfg.inner_steps,
        )?;
        d_theta
            .iter_mut()
            .zip(r.theta_grad(dim))
            .for_each(|(a, b)| *a += b);
        d_beta
            .iter_mut()
            .zip(r.beta_grad(dim))
            .for_each(|(a, b)| *a += b);
        results.push(r);
    }
    let inv = 1.0 / tasks.len() as f64;
    d_theta.iter_mut().for_each(|v| *v *= inv);
    d_beta.iter_mut().for_each(|v| *v *= inv);
    adam_step(
        &mut state.theta0,
        &d_theta,
        &mut state.theta_opt,
        cfg.outer_lr,
    )?;
    adam_step(&mut state.beta, &d_beta, &mut state.beta_opt, cfg.outer_lr)?;
    state
        .beta
        .iter_mut()
        .for_each(|b| *b = b.clamp(BETA_MIN, BETA_MAX));
    state.outer_iter += 1;
    Ok(results)
}

/// Frames available to outer iteration `j` (1-based).
pub fn progressive_frame_count(j: u64, n: usize, progressive: bool, rate: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::EmptyVideo);
    }
    if j < 1 {
        return Err(Error::DomainError(
            "outer iteration index starts at 1".into(),
        ));
    }
    if !progressive {
        return Ok(n);
    }
    Ok(j.saturating_mul(rate as u64).min(n as u64) as usize)
}

/// The first `min(j, N)` frames of `video`, or all of them when the
/// schedule is disabled.
pub fn progressive_frames(j: u64, video: &Video, progressive: bool) -> Result<Video> {
    Ok(video.prefix(progressive_frame_count(j, video.len(), progressive, 1)?))
}

/// Seeded per-epoch permutations of the dataset, addressable by draw index
/// so a resumed run samples the same sequence.
struct TaskSampler {
    seed: u64,
    len: usize,
    epoch: Option<(u64, Vec<usize>)>,
}

impl TaskSampler {
    fn new(seed: u64, len: usize) -> Self {
        TaskSampler {
            seed,
            len,
            epoch: None,
        }
    }

    fn draw(&mut self, index: u64) -> usize {
        let (epoch, pos) = (index / self.len as u64, (index % self.len as u64) as usize);
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            let mut perm: Vec<usize> = (0..self.len).collect();
            perm.shuffle(&mut rng);
            self.epoch = Some((epoch, perm));
        }
        self.epoch.as_ref().unwrap().1[pos]
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub outer_iter: u64,
    pub task_id: usize,
    pub frames_used: usize,
    pub losses: Vec<f64>,
    pub final_loss: Option<f64>,
}

/// Training log as CSV: `outer_iter,task_id,frames_used,loss_step_1..m,final_loss`.
pub fn log_csv(rows: &[LogRow], inner_steps: usize) -> String {
    let mut out = String::from("outer_iter,task_id,frames_used");
    for i in 1..=inner_steps {
        out.push_str(&format!(",loss_step_{i}"));
    }
    out.push_str(",final_loss\n");
    for r in rows {
        out.push_str(&r.csv_record());
    }
    out
}

impl LogRow {
    /// One CSV line, newline included.
    pub fn csv_record(&self) -> String {
        let mut line = format!("{},{},{}", self.outer_iter, self.task_id, self.frames_used);
        for l in &self.losses {
            line.push_str(&format!(",{l}"));
        }
        line.push(',');
        if let Some(l) = self.final_loss {
            line.push_str(&l.to_string());
        }
        line.push('\n');
        line
    }
}

/// Fresh meta-state for `init` under `cfg`.
pub fn init_state(init: &ModelParams, cfg: &MetaConfig) -> MetaState {
    MetaState::new(init.flatten(), cfg.beta_init)
}

/// Runs `steps` further outer iterations on `dataset`, invoking `on_row`
/// after each one.
pub fn train_steps(
    state: &mut MetaState,
    template: &ModelParams,
    dataset: &[Video],
    cfg: &MetaConfig,
    steps: usize,
    mut on_row: impl FnMut(&LogRow) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyVideo);
    }
    let res = dataset[0].resolution();
    if dataset.iter().any(|v| v.resolution() != res) {
        return Err(Error::InvalidConfig(
            "all training videos must share one resolution".into(),
        ));
    }
    if state.theta0.len() != template.len() {
        return Err(Error::LengthMismatch {
            expected: template.len(),
            actual: state.theta0.len(),
        });
    }
    let mut sampler = TaskSampler::new(cfg.seed, dataset.len());
    for _ in 0..steps {
        let j = state.outer_iter + 1;
        let ids: Vec<usize> = (0..cfg.tasks_per_step as u64)
            .map(|b| sampler.draw(state.outer_iter * cfg.tasks_per_step as u64 + b))
            .collect();
        let counts = ids
            .iter()
            .map(|&id| {
                progressive_frame_count(j, dataset[id].len(), cfg.progressive, cfg.progress_rate)
            })
            .collect::<Result<Vec<_>>>()?;
        let tasks = ids
            .iter()
            .zip(&counts)
            .map(|(&id, &t)| VideoObjective::new(template, &cfg.loss, &dataset[id], t))
            .collect::<Result<Vec<_>>>()?;
        let results = outer_step(state, &tasks, cfg)?;
        for ((id, t), r) in ids.iter().zip(&counts).zip(results) {
            on_row(&LogRow {
                outer_iter: j,
                task_id: *id,
                frames_used: *t,
                losses: r.losses,
                final_loss: r.final_loss,
            })?;
        }
    }
    Ok(())
}

/// Meta-trains from `init` for `cfg.outer_steps` iterations.
pub fn meta_train(
    init: &ModelParams,
    dataset: &[Video],
    cfg: &MetaConfig,
) -> Result<(MetaState, Vec<LogRow>)> {
    let mut state = init_state(init, cfg);
    let mut log = Vec::with_capacity(cfg.outer_steps * cfg.tasks_per_step);
    train_steps(&mut state, init, dataset, cfg, cfg.outer_steps, |row| {
        log.push(row.clone());
        Ok(())
    })?;
    Ok((state, log))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Training loss at this step's parameters.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptResult {
    pub params: ModelParams,
    /// `steps + 1` entries; entry 0 is the untouched initialization.
    pub trace: Vec<StepMetrics>,
}

impl AdaptResult {
    pub fn psnr_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|m| m.psnr).collect()
    }
}

/// Adaptation trace as CSV: `step,psnr,ms_ssim`.
pub fn trace_csv(trace: &[StepMetrics]) -> String {
    let mut out = String::from("step,psnr,ms_ssim\n");
    for m in trace {
        out.push_str(&format!("{},{},{}\n", m.step, m.psnr, m.ms_ssim));
    }
    out
}

fn frame_metrics(pred: &[Tensor], video: &Video, loss: &LossConfig) -> Result<(f64, f64)> {
    let psnr = psnr_frames(pred, video.frames())?;
    let mut ms = 0.0;
    for (p, g) in pred.iter().zip(video.frames()) {
        ms += ms_ssim(p, g, loss)?;
    }
    Ok((psnr, ms / pred.len() as f64))
}

/// Test-time fitting on the whole video with plain gradient steps.
pub fn adapt(
    init: &ModelParams,
    rate: InnerRate<'_>,
    video: &Video,
    steps: usize,
    loss: &LossConfig,
) -> Result<AdaptResult> {
    loss.validate()?;
    if let InnerRate::PerParam(b) = rate {
        if b.len() != init.len() {
            return Err(Error::LengthMismatch {
                expected: init.len(),
                actual: b.len(),
            });
        }
    }
    let objective = VideoObjective::new(init, loss, video, video.len())?;
    let mut phi = init.flatten();
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let e = objective.evaluate(&phi)?;
        checked(step + 1, e.loss)?;
        let (psnr, ms) = frame_metrics(&e.frames, video, loss)?;
        trace.push(StepMetrics {
            step,
            psnr,
            ms_ssim: ms,
            loss: e.loss,
        });
        if step < steps {
            rate.apply(&mut phi, &e.grad);
        }
    }
    Ok(AdaptResult {
        params: init.with_flat(phi)?,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: f64,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            1
        }

        fn loss_and_grad(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((
                (p[0] - self.center).powi(2),
                vec![2.0 * (p[0] - self.center)],
            ))
        }
    }

    struct Flat;

    impl Objective for Flat {
        fn dim(&self) -> usize {
            3
        }

        fn loss_and_grad(&self, _: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((0.5, vec![0.0; 3]))
        }
    }

    #[test]
    fn zero_inner_steps_is_a_no_op() {
        let r = inner_loop(
            &[0.3],
            InnerRate::Scalar(0.1),
            &Quadratic { center: 1.0 },
            0,
        )
        .unwrap();
        assert_eq!(r.phi_m, vec![0.3]);
        assert!(r.losses.is_empty() && r.grads.is_empty());
        assert_eq!(r.theta_grad(1), vec![0.0]);
    }

    #[test]
    fn one_step_from_zero_lands_on_center() {
        let beta = [0.5];
        let r = inner_loop(
            &[0.0],
            InnerRate::PerParam(&beta),
            &Quadratic { center: 1.0 },
            1,
        )
        .unwrap();
        assert_eq!(r.phi_m, vec![1.0]);
        assert_eq!(r.losses, vec![1.0]);
    }

    #[test]
    fn tiny_beta_leaves_params() {
        let beta = [1e-300];
        let r = inner_loop(
            &[0.25],
            InnerRate::PerParam(&beta),
            &Quadratic { center: 4.0 },
            3,
        )
        .unwrap();
        assert_eq!(r.phi_m, vec![0.25]);
    }

    #[test]
    fn zero_gradients_leave_state_fixed() {
        let mut st = MetaState::new(vec![1.0, 2.0, 3.0], 0.01);
        let before = st.clone();
        let cfg = MetaConfig::default();
        outer_step(&mut st, &[Flat], &cfg).unwrap();
        assert_eq!(st.theta0, before.theta0);
        assert_eq!(st.beta, before.beta);
        assert_eq!(st.outer_iter, 1);
    }

    #[test]
    fn duplicate_tasks_match_single_task() {
        let cfg = MetaConfig {
            inner_steps: 2,
            ..MetaConfig::default()
        };
        let mut a = MetaState::new(vec![0.2], 0.1);
        let mut b = a.clone();
        outer_step(&mut a, &[Quadratic { center: 1.5 }], &cfg).unwrap();
        outer_step(
            &mut b,
            &[Quadratic { center: 1.5 }, Quadratic { center: 1.5 }],
            &cfg,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beta_stays_clamped() {
        let cfg = MetaConfig {
            inner_steps: 1,
            outer_lr: 10.0,
            ..MetaConfig::default()
        };
        let mut st = MetaState::new(vec![0.0], 0.5);
        for c in [5.0, -5.0, 50.0, 0.1] {
            outer_step(&mut st, &[Quadratic { center: c }], &cfg).unwrap();
            assert!(st.beta.iter().all(|b| (BETA_MIN..=BETA_MAX).contains(b)));
        }
    }

    #[test]
    fn progressive_counts() {
        assert_eq!(progressive_frame_count(1, 8, true, 1).unwrap(), 1);
        assert_eq!(progressive_frame_count(5, 8, true, 1).unwrap(), 5);
        assert_eq!(progressive_frame_count(100, 8, true, 1).unwrap(), 8);
        assert_eq!(progressive_frame_count(1, 8, false, 1).unwrap(), 8);
        assert_eq!(progressive_frame_count(3, 8, true, 2).unwrap(), 6);
        assert!(progressive_frame_count(0, 8, true, 1).is_err());
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = TaskSampler::new(4, 5);
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..5).map(|i| s.draw(epoch * 5 + i)).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
        let mut fresh = TaskSampler::new(4, 5);
        assert_eq!(fresh.draw(7), s.draw(7));
    }
}
