//! Sup-norm residual training.
//!
//! Each step samples `K` points, evaluates the terminal mismatch
//! `|V(T, x) - l(x)|` on terminal samples and the variational residual
//! `|min{dV/dt + H(x, grad V), l(x) - V}|` on interior samples, reduces
//! both (max by default) into `h1` and `h2`, and takes one Adam step on
//! `h1 + lambda h2`. Training starts with a terminal-only phase at
//! `lambda = 0`, then a curriculum whose earliest sampled time slides from
//! `T` down to `0`, then a phase over the full horizon.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Costate, ProblemSpec, STATE_DIM};
use crate::sirennet::grad::{backward, BackwardScratch};
use crate::sirennet::{
    adam::adam_step, eval_scaled, init_params, physical_derivatives, scaled_input, AdamConfig, AdamState, Checkpoint,
    CheckpointMeta, NetworkArch, NetworkParams, ParamGrad, Trace, INPUT_DIM,
};

/// Samples per parallel work unit. Fixed so results do not depend on the
/// number of worker threads.
pub const CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Max,
    Mean,
    /// Mean of the `k` largest magnitudes.
    TopkMean(usize),
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reduction::Max => write!(f, "max"),
            Reduction::Mean => write!(f, "mean"),
            Reduction::TopkMean(k) => write!(f, "topk_mean({k})"),
        }
    }
}

impl Reduction {
    /// Reduced value and per-index weights (the subgradient of the
    /// reduction). Ties resolve to the lowest index.
    pub fn apply(&self, magnitudes: &[f64]) -> (f64, Vec<(usize, f64)>) {
        if magnitudes.is_empty() {
            return (0.0, Vec::new());
        }
        match *self {
            Reduction::Max => {
                let (idx, val) = argmax(magnitudes);
                (val, vec![(idx, 1.0)])
            }
            Reduction::Mean => {
                let n = magnitudes.len() as f64;
                let sum: f64 = magnitudes.iter().sum();
                (sum / n, (0..magnitudes.len()).map(|i| (i, 1.0 / n)).collect())
            }
            Reduction::TopkMean(k) => {
                let k = k.clamp(1, magnitudes.len());
                let mut order: Vec<usize> = (0..magnitudes.len()).collect();
                // stable sort keeps lower indices first among equal magnitudes
                order.sort_by(|&a, &b| magnitudes[b].total_cmp(&magnitudes[a]));
                order.truncate(k);
                order.sort_unstable();
                let sum: f64 = order.iter().map(|&i| magnitudes[i]).sum();
                let w = 1.0 / k as f64;
                (sum / k as f64, order.into_iter().map(|i| (i, w)).collect())
            }
        }
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Curriculum,
    Post,
    Finetune,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Curriculum => "curriculum",
            Phase::Post => "post",
            Phase::Finetune => "finetune",
        })
    }
}

fn default_terminal_fraction() -> f64 {
    0.1
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub samples_per_step: usize,
    pub lambda: f64,
    pub pretrain_steps: usize,
    pub curriculum_steps: usize,
    pub post_steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss_reduction: Reduction,
    /// Emit a checkpoint every this many steps; 0 emits only the final one.
    pub checkpoint_every: usize,
    /// Share of each non-pretrain batch pinned to `t = T`.
    #[serde(default = "default_terminal_fraction")]
    pub terminal_fraction: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl TrainConfig {
    /// Runnable-on-a-laptop settings.
    pub fn ci() -> Self {
        TrainConfig {
            samples_per_step: 2048,
            lambda: 1.0,
            pretrain_steps: 500,
            curriculum_steps: 3500,
            post_steps: 1000,
            lr: 1e-3,
            seed: 0,
            loss_reduction: Reduction::Mean,
            checkpoint_every: 500,
            terminal_fraction: default_terminal_fraction(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.pretrain_steps + self.curriculum_steps + self.post_steps
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_step == 0 {
            return Err(Error::schema("train.samples_per_step", "must be >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::schema("train.lambda", "must be finite and >= 0"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::schema("train.lr", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.terminal_fraction) {
            return Err(Error::schema("train.terminal_fraction", "must lie in [0, 1]"));
        }
        if let Reduction::TopkMean(0) = self.loss_reduction {
            return Err(Error::schema("train.loss_reduction", "topk_mean needs k >= 1"));
        }
        Ok(())
    }
}

/// One training step's log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub phase: Phase,
    pub t_min: f64,
    pub h1: f64,
    pub h2: f64,
    pub loss: f64,
    pub wall_ms: u64,
}

pub const LOG_HEADER: &str = "step,phase,t_min,h1,h2,loss,wall_ms";

impl TrainLogRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.phase, self.t_min, self.h1, self.h2, self.loss, self.wall_ms
        )
    }
}

/// A training point in physical coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: [f64; STATE_DIM],
    /// Terminal samples feed `h1`; the rest feed `h2`.
    pub terminal: bool,
}

/// RNG for a given global step; the batch at `(seed, step)` never depends
/// on anything else.
pub fn batch_rng(seed: u64, global_step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(global_step);
    rng
}

/// Earliest sampled time at curriculum step `step` (0-based).
pub fn curriculum_t_min(horizon: f64, step: usize, curriculum_steps: usize) -> f64 {
    if curriculum_steps <= 1 {
        return 0.0;
    }
    let frac = (step.min(curriculum_steps - 1)) as f64 / (curriculum_steps - 1) as f64;
    (horizon * (1.0 - frac)).max(0.0)
}

fn uniform_state<R: Rng>(rng: &mut R, spec: &ProblemSpec) -> [f64; STATE_DIM] {
    std::array::from_fn(|i| {
        let (lo, hi) = (spec.state_lo[i], spec.state_hi[i]);
        if spec.periodic[i] {
            rng.gen_range(lo..hi)
        } else {
            rng.gen_range(lo..=hi)
        }
    })
}

/// Draws one batch. Returns the samples and the phase's `t_min`.
pub fn sample_batch<R: Rng>(
    rng: &mut R,
    spec: &ProblemSpec,
    phase: Phase,
    phase_step: usize,
    config: &TrainConfig,
) -> (Vec<Sample>, f64) {
    let k = config.samples_per_step;
    let horizon = spec.horizon;
    let t_min = match phase {
        Phase::Pretrain => horizon,
        Phase::Curriculum => curriculum_t_min(horizon, phase_step, config.curriculum_steps),
        Phase::Post | Phase::Finetune => 0.0,
    };
    let n_terminal = match phase {
        Phase::Pretrain => k,
        _ => ((k as f64) * config.terminal_fraction).round() as usize,
    };
    let mut batch = Vec::with_capacity(k);
    for i in 0..k {
        let x = uniform_state(rng, spec);
        if i < n_terminal {
            batch.push(Sample {
                t: horizon,
                x,
                terminal: true,
            });
        } else {
            let t = if t_min >= horizon {
                horizon
            } else {
                rng.gen_range(t_min..=horizon)
            };
            batch.push(Sample { t, x, terminal: false });
        }
    }
    (batch, t_min)
}

/// The two arguments of the variational residual,
/// `(dV/dt + H(x, grad V), l(x) - V)`.
#[inline]
pub fn residual_branches(spec: &ProblemSpec, x: &[f64; STATE_DIM], value: f64, dt: f64, dx: &Costate) -> (f64, f64) {
    (dt + spec.hamiltonian(x, dx), spec.margin(x) - value)
}

/// `min{dV/dt + H(x, grad V), l(x) - V}`; zero for an exact solution.
#[inline]
pub fn variational_residual(spec: &ProblemSpec, x: &[f64; STATE_DIM], value: f64, dt: f64, dx: &Costate) -> f64 {
    let (pde, obstacle) = residual_branches(spec, x, value, dt, dx);
    pde.min(obstacle)
}

/// Per-sample quantities kept for the backward pass.
#[derive(Clone, Copy, Debug)]
struct SampleEval {
    magnitude: f64,
    /// `d magnitude / dV`.
    value_bar: f64,
    /// `d magnitude / d(dV/dz)` in scaled coordinates.
    jac_bar: [f64; INPUT_DIM],
}

fn eval_sample(
    params: &NetworkParams,
    arch: &NetworkArch,
    spec: &ProblemSpec,
    sample: &Sample,
    trace: &mut Trace,
) -> SampleEval {
    let scaling = spec.scaling();
    let x = spec.canonical(&crate::problem::StateVec(sample.x)).0;
    let z = scaled_input(&scaling, sample.t, &x);
    eval_scaled(params, arch, &z, trace);
    let margin = spec.margin(&x);
    if sample.terminal {
        let e = trace.value - margin;
        return SampleEval {
            magnitude: e.abs(),
            value_bar: crate::problem::sign(e),
            jac_bar: [0.0; INPUT_DIM],
        };
    }
    let (dt, dx) = physical_derivatives(&scaling, &trace.jac);
    let p = Costate(dx);
    let (pde, obstacle) = residual_branches(spec, &x, trace.value, dt, &p);
    if pde <= obstacle {
        let s = crate::problem::sign(pde);
        let dh = spec.hamiltonian_costate_gradient(&x, &p);
        let mut jac_bar = [0.0; INPUT_DIM];
        jac_bar[0] = s / scaling.horizon;
        for i in 0..STATE_DIM {
            jac_bar[i + 1] = s * dh[i] / scaling.half_width[i];
        }
        SampleEval {
            magnitude: pde.abs(),
            value_bar: 0.0,
            jac_bar,
        }
    } else {
        SampleEval {
            magnitude: obstacle.abs(),
            value_bar: -crate::problem::sign(obstacle),
            jac_bar: [0.0; INPUT_DIM],
        }
    }
}

/// Result of [`compute_loss`]. Argmax indices refer to positions in the
/// batch (lowest index on ties) and are `None` when that term has no
/// samples.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub h1: f64,
    pub h2: f64,
    pub loss: f64,
    pub argmax_terminal: Option<usize>,
    pub argmax_interior: Option<usize>,
    /// Batch indices and loss weights contributing to the gradient.
    pub(crate) seeds: Vec<(usize, f64)>,
}

fn evaluate_batch(params: &NetworkParams, arch: &NetworkArch, spec: &ProblemSpec, batch: &[Sample]) -> Vec<SampleEval> {
    batch
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut trace = Trace::default();
            chunk
                .iter()
                .map(|s| eval_sample(params, arch, spec, s, &mut trace))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn reduce(batch: &[Sample], evals: &[SampleEval], lambda: f64, reduction: Reduction) -> Result<LossEval> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(index) = evals.iter().position(|e| !e.magnitude.is_finite()) {
        return Err(Error::Numeric {
            what: "per-sample residual",
            index,
        });
    }
    let mut term_idx = Vec::new();
    let mut term_mag = Vec::new();
    let mut int_idx = Vec::new();
    let mut int_mag = Vec::new();
    for (i, (s, e)) in batch.iter().zip(evals).enumerate() {
        if s.terminal {
            term_idx.push(i);
            term_mag.push(e.magnitude);
        } else {
            int_idx.push(i);
            int_mag.push(e.magnitude);
        }
    }
    let (h1, w1) = reduction.apply(&term_mag);
    let (h2, w2) = reduction.apply(&int_mag);
    let argmax_terminal = (!term_mag.is_empty()).then(|| term_idx[argmax(&term_mag).0]);
    let argmax_interior = (!int_mag.is_empty()).then(|| int_idx[argmax(&int_mag).0]);
    let mut seeds: Vec<(usize, f64)> = w1.into_iter().map(|(j, w)| (term_idx[j], w)).collect();
    if lambda != 0.0 {
        seeds.extend(w2.into_iter().map(|(j, w)| (int_idx[j], lambda * w)));
    }
    seeds.sort_unstable_by_key(|&(i, _)| i);
    Ok(LossEval {
        h1,
        h2,
        loss: h1 + lambda * h2,
        argmax_terminal,
        argmax_interior,
        seeds,
    })
}

/// Sampled sup-norm loss `h1 + lambda h2` over `batch`.
pub fn compute_loss(
    params: &NetworkParams,
    arch: &NetworkArch,
    spec: &ProblemSpec,
    batch: &[Sample],
    lambda: f64,
    reduction: Reduction,
) -> Result<LossEval> {
    let evals = evaluate_batch(params, arch, spec, batch);
    reduce(batch, &evals, lambda, reduction)
}

/// Loss plus its parameter (sub)gradient.
pub fn loss_and_grad(
    params: &NetworkParams,
    arch: &NetworkArch,
    spec: &ProblemSpec,
    batch: &[Sample],
    lambda: f64,
    reduction: Reduction,
) -> Result<(LossEval, ParamGrad)> {
    let evals = evaluate_batch(params, arch, spec, batch);
    let eval = reduce(batch, &evals, lambda, reduction)?;
    let partials: Vec<Vec<f64>> = eval
        .seeds
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; params.len()];
            let mut trace = Trace::default();
            let mut scratch = BackwardScratch::default();
            let scaling = spec.scaling();
            for &(i, w) in chunk {
                let s = &batch[i];
                let e = &evals[i];
                let x = spec.canonical(&crate::problem::StateVec(s.x)).0;
                let z = scaled_input(&scaling, s.t, &x);
                eval_scaled(params, arch, &z, &mut trace);
                let jac_bar = e.jac_bar.map(|v| w * v);
                backward(params, arch, &trace, w * e.value_bar, &jac_bar, &mut grad, &mut scratch);
            }
            grad
        })
        .collect();
    let mut grad = ParamGrad::zeros(params.len());
    for part in &partials {
        for (g, p) in grad.0.iter_mut().zip(part) {
            *g += p;
        }
    }
    if let Some(index) = grad.0.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            what: "parameter gradient entry",
            index,
        });
    }
    Ok((eval, grad))
}

/// Something a training run reports as it goes.
pub enum TrainEvent<'a> {
    Record(&'a TrainLogRecord),
    Checkpoint(&'a Checkpoint),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient stopped the run; the returned
    /// checkpoint is the last finite one.
    Diverged {
        step: u64,
        reason: String,
    },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRecord>,
    pub status: TrainStatus,
}

/// Settings for resuming from a checkpoint with the max reduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    pub steps: usize,
    pub samples_per_step: usize,
    pub lambda: f64,
    pub lr: f64,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_terminal_fraction")]
    pub terminal_fraction: f64,
}

impl FineTuneConfig {
    pub fn from_train(config: &TrainConfig, steps: usize) -> Self {
        FineTuneConfig {
            steps,
            samples_per_step: config.samples_per_step,
            lambda: config.lambda,
            lr: config.lr,
            seed: config.seed,
            checkpoint_every: config.checkpoint_every,
            terminal_fraction: config.terminal_fraction,
        }
    }

    fn as_train_config(&self) -> TrainConfig {
        TrainConfig {
            samples_per_step: self.samples_per_step,
            lambda: self.lambda,
            pretrain_steps: 0,
            curriculum_steps: 0,
            post_steps: self.steps,
            lr: self.lr,
            seed: self.seed,
            loss_reduction: Reduction::Max,
            checkpoint_every: self.checkpoint_every,
            terminal_fraction: self.terminal_fraction,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

struct Segment {
    phase: Phase,
    steps: usize,
    lambda: f64,
}

/// Drives the optimization loop shared by [`train`] and [`fine_tune`].
pub struct Trainer<'a> {
    spec: &'a ProblemSpec,
    arch: &'a NetworkArch,
    config: TrainConfig,
    wall_clock: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(spec: &'a ProblemSpec, arch: &'a NetworkArch, config: TrainConfig) -> Self {
        Trainer {
            spec,
            arch,
            config,
            wall_clock: true,
        }
    }

    /// With the clock off every record reports `wall_ms = 0`, making logs
    /// byte-reproducible.
    pub fn wall_clock(mut self, on: bool) -> Self {
        self.wall_clock = on;
        self
    }

    pub fn run(&self, emit: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<TrainOutcome> {
        self.spec.validate()?;
        self.arch.validate()?;
        self.config.validate()?;
        let params = init_params(self.arch, self.config.seed);
        let segments = [
            Segment {
                phase: Phase::Pretrain,
                steps: self.config.pretrain_steps,
                lambda: 0.0,
            },
            Segment {
                phase: Phase::Curriculum,
                steps: self.config.curriculum_steps,
                lambda: self.config.lambda,
            },
            Segment {
                phase: Phase::Post,
                steps: self.config.post_steps,
                lambda: self.config.lambda,
            },
        ];
        self.optimize(params, AdamState::new(self.arch.param_count()), 0, &segments, emit)
    }

    fn snapshot(&self, params: &NetworkParams, adam: &AdamState, step: u64, loss: Option<f64>) -> Checkpoint {
        Checkpoint {
            arch: self.arch.clone(),
            problem: self.spec.clone(),
            scaling: self.spec.scaling(),
            params: params.clone(),
            optimizer_state: Some(adam.clone()),
            meta: CheckpointMeta {
                step,
                seed: self.config.seed,
                loss,
                reduction: Some(self.config.loss_reduction.to_string()),
            },
        }
    }

    fn optimize(
        &self,
        mut params: NetworkParams,
        mut adam: AdamState,
        start_step: u64,
        segments: &[Segment],
        emit: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
    ) -> Result<TrainOutcome> {
        let adam_config = self.config.adam();
        let started = Instant::now();
        let mut log = Vec::new();
        let mut step = start_step;
        let mut last_loss = None;
        let every = self.config.checkpoint_every as u64;
        let total: usize = segments.iter().map(|s| s.steps).sum();

        if every > 0 && total > 0 {
            emit(TrainEvent::Checkpoint(&self.snapshot(&params, &adam, step, last_loss)))?;
        }
        for seg in segments {
            for phase_step in 0..seg.steps {
                step += 1;
                let mut rng = batch_rng(self.config.seed, step);
                let (batch, t_min) = sample_batch(&mut rng, self.spec, seg.phase, phase_step, &self.config);
                let result = loss_and_grad(
                    &params,
                    self.arch,
                    self.spec,
                    &batch,
                    seg.lambda,
                    self.config.loss_reduction,
                )
                .and_then(|(eval, grad)| {
                    if eval.loss.is_finite() {
                        Ok((eval, grad))
                    } else {
                        Err(Error::Numeric { what: "loss", index: 0 })
                    }
                });
                let (eval, grad) = match result {
                    Ok(v) => v,
                    Err(Error::Numeric { what, index }) => {
                        let checkpoint = self.snapshot(&params, &adam, step - 1, last_loss);
                        return Ok(TrainOutcome {
                            checkpoint,
                            log,
                            status: TrainStatus::Diverged {
                                step,
                                reason: format!("non-finite {what} at sample {index}"),
                            },
                        });
                    }
                    Err(e) => return Err(e),
                };
                let record = TrainLogRecord {
                    step,
                    phase: seg.phase,
                    t_min,
                    h1: eval.h1,
                    h2: eval.h2,
                    loss: eval.loss,
                    wall_ms: if self.wall_clock {
                        started.elapsed().as_millis() as u64
                    } else {
                        0
                    },
                };
                emit(TrainEvent::Record(&record))?;
                log.push(record);

                let mut next = params.clone();
                let mut next_adam = adam.clone();
                adam_step(&mut next, &grad, &mut next_adam, &adam_config)?;
                if next.as_slice().iter().any(|v| !v.is_finite()) {
                    let checkpoint = self.snapshot(&params, &adam, step - 1, last_loss);
                    return Ok(TrainOutcome {
                        checkpoint,
                        log,
                        status: TrainStatus::Diverged {
                            step,
                            reason: "non-finite parameter after update".into(),
                        },
                    });
                }
                params = next;
                adam = next_adam;
                last_loss = Some(eval.loss);
                if every > 0 && step % every == 0 {
                    emit(TrainEvent::Checkpoint(&self.snapshot(&params, &adam, step, last_loss)))?;
                }
            }
        }
        let checkpoint = self.snapshot(&params, &adam, step, last_loss);
        if total > 0 && (every == 0 || step % every != 0) {
            emit(TrainEvent::Checkpoint(&checkpoint))?;
        }
        Ok(TrainOutcome {
            checkpoint,
            log,
            status: TrainStatus::Completed,
        })
    }
}

/// Trains from a fresh initialization.
pub fn train(
    spec: &ProblemSpec,
    arch: &NetworkArch,
    config: &TrainConfig,
    emit: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    Trainer::new(spec, arch, config.clone()).run(emit)
}

/// Continues training `checkpoint` with the max reduction over the full
/// horizon. Optimizer moments restart from zero. Problem and scaling are
/// carried over from the checkpoint unchanged.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    expected_arch: &NetworkArch,
    config: &FineTuneConfig,
    wall_clock: bool,
    emit: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    if &checkpoint.arch != expected_arch {
        return Err(Error::schema(
            "arch",
            "checkpoint architecture differs from the configured one",
        ));
    }
    let train_config = config.as_train_config();
    train_config.validate()?;
    let trainer = Trainer::new(&checkpoint.problem, &checkpoint.arch, train_config).wall_clock(wall_clock);
    let segments = [Segment {
        phase: Phase::Finetune,
        steps: config.steps,
        lambda: config.lambda,
    }];
    let mut outcome = trainer.optimize(
        checkpoint.params.clone(),
        AdamState::new(checkpoint.params.len()),
        checkpoint.meta.step,
        &segments,
        emit,
    )?;
    outcome.checkpoint.scaling = checkpoint.scaling.clone();
    if config.steps == 0 {
        outcome.checkpoint.meta = checkpoint.meta.clone();
        outcome.checkpoint.optimizer_state = checkpoint.optimizer_state.clone();
    }
    Ok(outcome)
}
