//! End-to-end training by backpropagation through whole rollouts.
//!
//! Each epoch draws fresh initial conditions, builds their reference
//! trajectories, rolls the learned scheme out from a zero hidden state,
//! differentiates the summed simulation error (plus the `delta_c` penalty)
//! through every stage of every step, and applies one Adam update.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equations::{
    reference_trajectory, sample_initial_condition, AttractorPool, IcDescriptor, IcSettings, PdeKind, PdeSpec,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, Trajectory};
use crate::model::{Checkpoint, LearnedScheme, ModelConfig, ModelParams, StageRecord};
use crate::rng::{derive_seed, substream, Purpose};

/// What is being learned: the equation, its coarse grid and step, and how
/// training data are produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub spec: PdeSpec,
    pub grid: Grid,
    pub dt: f64,
    /// Reference solutions run on the grid refined by this factor.
    pub refine: usize,
    pub ic: IcSettings,
    /// Length (in time units) of the attractor run KS windows are drawn from.
    pub ks_pool_duration: f64,
}

impl Problem {
    /// Paper-scale defaults for each equation on a 100-cell grid.
    pub fn default_for(kind: PdeKind) -> Self {
        let (spec, length, dt) = match kind {
            PdeKind::Advection => (PdeSpec::advection(1.0), 1.0, 0.005),
            PdeKind::Burgers => (PdeSpec::burgers(), 1.0, 0.002),
            PdeKind::KuramotoSivashinsky => (PdeSpec::kuramoto_sivashinsky(1.0), 64.0, 0.01),
        };
        Self {
            spec,
            grid: Grid::new(length, 100).expect("valid default grid"),
            dt,
            refine: 4,
            ic: IcSettings::default(),
            ks_pool_duration: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.refine == 0 {
            return Err(Error::invalid("refinement factor must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Initial conditions per epoch (`n_m`).
    pub minibatch: usize,
    /// Rollout length `T` in steps.
    pub horizon: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight of the mean squared `delta_c` penalty.
    pub lambda: f64,
    /// Cut the adjoint every this many steps; `None` is full-horizon BPTT.
    pub truncation: Option<usize>,
    pub blowup_threshold: f64,
    /// Cap on each (frame, cell) squared error; missing frames after a blow-up
    /// are charged the cap.
    pub blowup_penalty: f64,
    /// Checkpoint every this many epochs (0 disables periodic ones).
    pub checkpoint_every: usize,
    /// Worker threads for the minibatch; results do not depend on it.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            minibatch: 5,
            horizon: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda: 1e-3,
            truncation: None,
            blowup_threshold: 1e6,
            blowup_penalty: 10.0,
            checkpoint_every: 50,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn default_for(kind: PdeKind) -> Self {
        let base = Self::default();
        match kind {
            PdeKind::Advection => base,
            PdeKind::Burgers => Self { epochs: 500, ..base },
            PdeKind::KuramotoSivashinsky => Self {
                horizon: 200,
                lambda: 0.1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 || self.horizon == 0 || self.jobs == 0 {
            return Err(Error::invalid("minibatch, horizon and jobs must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("invalid Adam hyperparameters"));
        }
        if self.truncation == Some(0) {
            return Err(Error::invalid("truncation window must be positive"));
        }
        if !(self.blowup_threshold > 0.0) || !(self.blowup_penalty >= 0.0) {
            return Err(Error::invalid("invalid blow-up settings"));
        }
        Ok(())
    }
}

/// One training (or evaluation) case: where it came from and its reference.
/// The coarse initial condition is `reference.frames[0]`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub descriptor: IcDescriptor,
    pub reference: Trajectory,
}

impl Sample {
    pub fn initial(&self) -> &[f64] {
        &self.reference.frames[0]
    }
}

/// `trajectory_mse(traj, ref) + lambda * reg_sum / n_evals`.
pub fn loss(traj: &Trajectory, reference: &Trajectory, reg_sum: f64, n_evals: usize, lambda: f64) -> Result<f64> {
    let mse = crate::grid::trajectory_mse(traj, reference)?;
    Ok(mse + if n_evals > 0 { lambda * reg_sum / n_evals as f64 } else { 0.0 })
}

#[derive(Clone, Debug)]
pub struct SampleResult {
    pub loss: f64,
    pub mse: f64,
    /// Mean `||delta_c||^2` per evaluation.
    pub reg_mean: f64,
    pub blowup: Option<usize>,
    pub grad: Vec<f64>,
}

/// Loss of one sample, with blow-ups charged as in training.
pub fn sample_loss(scheme: &LearnedScheme, params: &ModelParams, sample: &Sample, cfg: &TrainConfig) -> f64 {
    forward_loss(scheme, params, sample, cfg, None).0
}

fn forward_loss(
    scheme: &LearnedScheme,
    params: &ModelParams,
    sample: &Sample,
    cfg: &TrainConfig,
    tape: Option<&mut Vec<[StageRecord; 3]>>,
) -> (f64, f64, f64, crate::model::RolloutOutput) {
    let t = sample.reference.n_frames() - 1;
    let out = scheme.rollout_with(
        params,
        sample.initial(),
        sample.reference.dt,
        t,
        cfg.blowup_threshold,
        tape,
    );
    let n = scheme.n_points();
    let kept = out.trajectory.n_frames();
    let missing = (t + 1 - kept) as f64;
    let cap = cfg.blowup_penalty;
    let sq: f64 = out
        .trajectory
        .frames
        .iter()
        .zip(&sample.reference.frames)
        .flat_map(|(f, r)| f.iter().zip(r))
        .map(|(u, r)| ((u - r) * (u - r)).min(cap))
        .sum();
    let mse = (sq + cfg.blowup_penalty * missing * n as f64) / ((t + 1) * n) as f64;
    let reg_mean = if out.n_evals > 0 {
        out.reg_sum / out.n_evals as f64
    } else {
        0.0
    };
    (mse + cfg.lambda * reg_mean, mse, reg_mean, out)
}

/// Loss and exact parameter gradient for one sample.
pub fn sample_grad(scheme: &LearnedScheme, params: &ModelParams, sample: &Sample, cfg: &TrainConfig) -> SampleResult {
    let mut tape = Vec::new();
    let (loss, mse, reg_mean, out) = forward_loss(scheme, params, sample, cfg, Some(&mut tape));
    let n = scheme.n_points();
    let t = sample.reference.n_frames() - 1;
    let dt = sample.reference.dt;
    let frame_scale = 2.0 / ((t + 1) * n) as f64;
    let reg_bar = if out.n_evals > 0 {
        cfg.lambda / out.n_evals as f64
    } else {
        0.0
    };
    let frames = &out.trajectory.frames;
    let mut grad = vec![0.0; params.values.len()];
    let hidden = scheme.config.hidden;
    let mut h_bar = Array2::zeros((n, hidden));
    let mut c_bar = Array2::zeros((n, hidden));
    let frame_bar = |k: usize| -> Vec<f64> {
        frames[k]
            .iter()
            .zip(&sample.reference.frames[k])
            .map(|(u, r)| {
                let e = u - r;
                if e * e < cfg.blowup_penalty {
                    frame_scale * e
                } else {
                    0.0
                }
            })
            .collect()
    };
    // adjoint of the newest recorded frame
    let mut u_bar = frame_bar(tape.len());
    for k in (0..tape.len()).rev() {
        let [r0, r1, r2] = &tape[k];
        // u_next = u/3 + 2/3 u2 + 2/3 dt L2
        let l2_bar: Vec<f64> = u_bar.iter().map(|b| 2.0 / 3.0 * dt * b).collect();
        let mut u2_bar: Vec<f64> = u_bar.iter().map(|b| 2.0 / 3.0 * b).collect();
        let mut u0_bar: Vec<f64> = u_bar.iter().map(|b| b / 3.0).collect();
        let a2 = scheme.stage_backward(params, r2, &l2_bar, &h_bar, &c_bar, reg_bar, &mut grad);
        add(&mut u2_bar, &a2.input);
        // u2 = 3/4 u + 1/4 u1 + 1/4 dt L1
        let l1_bar: Vec<f64> = u2_bar.iter().map(|b| 0.25 * dt * b).collect();
        let mut u1_bar: Vec<f64> = u2_bar.iter().map(|b| 0.25 * b).collect();
        for (a, b) in u0_bar.iter_mut().zip(&u2_bar) {
            *a += 0.75 * b;
        }
        let a1 = scheme.stage_backward(params, r1, &l1_bar, &a2.h, &a2.c, reg_bar, &mut grad);
        add(&mut u1_bar, &a1.input);
        // u1 = u + dt L0
        let l0_bar: Vec<f64> = u1_bar.iter().map(|b| dt * b).collect();
        add(&mut u0_bar, &u1_bar);
        let a0 = scheme.stage_backward(params, r0, &l0_bar, &a1.h, &a1.c, reg_bar, &mut grad);
        add(&mut u0_bar, &a0.input);
        h_bar = a0.h;
        c_bar = a0.c;
        if let Some(w) = cfg.truncation {
            if k % w == 0 {
                u0_bar.fill(0.0);
                h_bar.fill(0.0);
                c_bar.fill(0.0);
            }
        }
        // frame k's own error; frame 0 is the fixed initial condition
        if k > 0 {
            add(&mut u0_bar, &frame_bar(k));
        }
        u_bar = u0_bar;
    }
    SampleResult {
        loss,
        mse,
        reg_mean,
        blowup: out.blowup,
        grad,
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Summed loss and gradient over a minibatch.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub blowups: usize,
    /// Samples whose gradient overflowed and was left out of the update.
    pub dropped: usize,
    pub per_sample: Vec<SampleResult>,
}

/// Summed minibatch gradient. Samples are processed by up to `cfg.jobs`
/// workers and reduced in index order, so the result does not depend on
/// the worker count.
pub fn grad(scheme: &LearnedScheme, params: &ModelParams, cfg: &TrainConfig, minibatch: &[Sample]) -> Result<BatchResult> {
    let results: Vec<SampleResult> = run_parallel(cfg.jobs, || {
        minibatch.par_iter().map(|s| sample_grad(scheme, params, s, cfg)).collect()
    })?;
    let mut total = vec![0.0; params.values.len()];
    let mut loss = 0.0;
    let mut blowups = 0;
    let mut dropped = 0;
    for r in &results {
        if !r.loss.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite training loss (mse {}, reg {})",
                r.mse, r.reg_mean
            )));
        }
        loss += r.loss;
        blowups += r.blowup.is_some() as usize;
        if r.grad.iter().all(|g| g.is_finite()) {
            add(&mut total, &r.grad);
        } else {
            dropped += 1;
        }
    }
    Ok(BatchResult {
        loss,
        grad: total,
        blowups,
        dropped,
        per_sample: results,
    })
}

/// Runs `f` on a dedicated pool of `jobs` threads.
pub fn run_parallel<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map(|p| p.install(f))
        .map_err(|e| Error::invalid(format!("cannot start worker threads: {e}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamMoments {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], moments: &mut AdamMoments, hyper: &AdamHyper) -> Result<()> {
    if params.len() != grad.len() || params.len() != moments.m.len() {
        return Err(Error::shape("Adam: parameter, gradient and moment lengths differ"));
    }
    moments.step += 1;
    let t = moments.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        moments.m[i] = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * g;
        moments.v[i] = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = moments.m[i] / c1;
        let v_hat = moments.v[i] / c2;
        params[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    Ok(())
}

/// Builds `count` cases from the seeds `derive_seed(seed, purpose, first + j)`.
/// KS cases are windows of `pool` when one is given.
pub fn draw_samples(
    problem: &Problem,
    horizon: usize,
    seed: u64,
    purpose: Purpose,
    first: u64,
    count: usize,
    pool: Option<&AttractorPool>,
) -> Result<Vec<Sample>> {
    let fine = problem.grid.refined(problem.refine)?;
    (0..count as u64)
        .map(|j| {
            let index = first + j;
            if let Some(pool) = pool {
                let max_start = pool.max_start(horizon);
                let start = {
                    use rand::RngExt;
                    substream(seed, purpose, index).random_range(0..=max_start)
                };
                let (descriptor, reference) = pool.window(start, horizon)?;
                return Ok(Sample { descriptor, reference });
            }
            let ic = sample_initial_condition(&problem.spec, &problem.ic, derive_seed(seed, purpose, index), fine)?;
            let reference = reference_trajectory(&problem.spec, &ic, problem.grid, problem.dt, horizon, problem.refine)?;
            Ok(Sample {
                descriptor: ic.descriptor,
                reference,
            })
        })
        .collect()
}

/// The attractor run that KS training windows are cut from.
pub fn training_pool(problem: &Problem, seed: u64) -> Result<Option<AttractorPool>> {
    if problem.spec.kind != PdeKind::KuramotoSivashinsky {
        return Ok(None);
    }
    AttractorPool::generate(
        &problem.spec,
        &problem.ic,
        derive_seed(seed, Purpose::TrainPool, 0),
        problem.grid,
        problem.dt,
        problem.refine,
        problem.ks_pool_duration,
    )
    .map(Some)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub blowups: usize,
    pub dropped: usize,
    pub wall_seconds: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "epoch={} loss={:.9e} grad_norm={:.6e} blowups={} dropped={} wall_s={:.3}",
            self.epoch, self.loss, self.grad_norm, self.blowups, self.dropped, self.wall_seconds
        )
    }
}

pub struct TrainOutcome {
    pub scheme: LearnedScheme,
    pub params: ModelParams,
    pub history: Vec<EpochLog>,
}

/// Trains from the seed's weight initialisation. `on_epoch` sees each epoch's
/// log and, every `checkpoint_every` epochs and after the last one, a
/// checkpoint (epoch 0 is the initialisation, reported once up front).
pub fn train(
    problem: &Problem,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(Option<&EpochLog>, Option<&Checkpoint>) -> Result<()>,
) -> Result<TrainOutcome> {
    problem.validate()?;
    cfg.validate()?;
    let scheme = LearnedScheme::new(&problem.spec, problem.grid, model)?;
    let params = scheme.init_params(&mut substream(seed, Purpose::WeightInit, 0));
    train_from(problem, cfg, seed, scheme, params, &mut on_epoch)
}

/// As [`train`] but from given parameters.
pub fn train_from(
    problem: &Problem,
    cfg: &TrainConfig,
    seed: u64,
    scheme: LearnedScheme,
    mut params: ModelParams,
    on_epoch: &mut dyn FnMut(Option<&EpochLog>, Option<&Checkpoint>) -> Result<()>,
) -> Result<TrainOutcome> {
    on_epoch(None, Some(&Checkpoint::new(&scheme, &params, 0)))?;
    let pool = if cfg.epochs > 0 {
        training_pool(problem, seed)?
    } else {
        None
    };
    let hyper = AdamHyper::from(cfg);
    let mut moments = AdamMoments::new(params.values.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let first = ((epoch - 1) * cfg.minibatch) as u64;
        let batch = draw_samples(
            problem,
            cfg.horizon,
            seed,
            Purpose::TrainIc,
            first,
            cfg.minibatch,
            pool.as_ref(),
        )?;
        let result = grad(&scheme, &params, cfg, &batch)?;
        let grad_norm = result.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        adam_step(&mut params.values, &result.grad, &mut moments, &hyper)?;
        let log = EpochLog {
            epoch,
            loss: result.loss,
            grad_norm,
            blowups: result.blowups,
            dropped: result.dropped,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let due = epoch == cfg.epochs || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0);
        let ckpt = due.then(|| Checkpoint::new(&scheme, &params, epoch));
        on_epoch(Some(&log), ckpt.as_ref())?;
        history.push(log);
    }
    Ok(TrainOutcome {
        scheme,
        params,
        history,
    })
}
