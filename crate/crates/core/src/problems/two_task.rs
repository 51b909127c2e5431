//! Two related regression tasks for forgetting experiments.
//!
//! Targets come from two fixed teacher networks; the task-B teacher is the
//! task-A teacher with a fixed perturbation of its weights, so fine-tuning
//! on B from a model fitted to A mirrors adapting a pre-trained model to a
//! nearby downstream task. Inputs are drawn per seed. By default task B
//! covers a corner of task A's input square and carries label noise, so
//! its loss has a floor that any optimizer plateaus near.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::mlp::{mlp_forward, mlp_loss, mlp_loss_and_grad, Batch, MlpSpec, Sample};
use super::Problem;
use crate::error::{MofoError, Result};
use crate::optimizers::{adam_step, HyperParams, LrSchedule, OptimizerState};
use crate::partition::{BlockLayout, PartitionedVector};
use crate::rng::{self, streams};

/// Seed of the two teacher networks; fixed so that every run seed sees the
/// same pair of tasks.
const TEACHER_SEED: u64 = 0x5EED_7EAC;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTaskConfig {
    /// Student architecture.
    pub student: MlpSpec,
    pub teacher_hidden: usize,
    /// Scale of the perturbation turning teacher A into teacher B.
    pub task_shift: f64,
    /// Fraction of teacher parameters the perturbation touches.
    pub task_shift_fraction: f64,
    pub n_per_task: usize,
    /// Task-B inputs are uniform on `[lo, hi]` in every coordinate; task A
    /// always uses `[-1, 1]`.
    pub task_b_inputs: (f64, f64),
    /// Standard deviation of uniform label noise added to task-B targets.
    pub task_b_noise: f64,
    /// Student weight init scale, relative to `1 / sqrt(fan_in)`.
    pub init_scale: f64,
    pub pretrain_threshold: f64,
    pub pretrain_lr: f64,
    pub pretrain_max_steps: u64,
    /// Mini-batch size for fine-tuning gradients; `None` means full batch.
    pub batch_size: Option<usize>,
}

impl Default for TwoTaskConfig {
    fn default() -> Self {
        Self {
            student: MlpSpec {
                input: 2,
                hidden: 16,
                output: 1,
            },
            teacher_hidden: 8,
            task_shift: 0.5,
            task_shift_fraction: 1.0,
            n_per_task: 128,
            task_b_inputs: (0.5, 1.0),
            task_b_noise: 0.1,
            init_scale: 0.5,
            pretrain_threshold: 1e-3,
            pretrain_lr: 1e-2,
            pretrain_max_steps: 20_000,
            batch_size: None,
        }
    }
}

fn teacher_pair(cfg: &TwoTaskConfig) -> Result<(MlpSpec, PartitionedVector, PartitionedVector)> {
    let spec = MlpSpec::new(cfg.student.input, cfg.teacher_hidden, cfg.student.output)?;
    let mut r = rng::seeded(TEACHER_SEED, streams::TEACHER);
    let mut a = spec.init(&mut r, 2.0)?;
    // Nonzero biases keep the target functions from being odd in x.
    for k in [1, 3] {
        for w in a.block_mut(k)? {
            *w = r.random_range(-1.0..=1.0);
        }
    }
    let mut b = a.clone();
    if !(0.0..=1.0).contains(&cfg.task_shift_fraction) {
        return Err(MofoError::InvalidArgument(format!(
            "task_shift_fraction {} outside [0, 1]",
            cfg.task_shift_fraction
        )));
    }
    for w in b.as_mut_slice() {
        let delta = cfg.task_shift * r.random_range(-1.0..=1.0);
        if r.random_bool(cfg.task_shift_fraction) {
            *w += delta;
        }
    }
    b.check_finite()?;
    Ok((spec, a, b))
}

fn label(spec: &MlpSpec, teacher: &PartitionedVector, xs: Vec<Vec<f64>>) -> Result<Batch> {
    xs.into_iter()
        .map(|x| {
            let y = mlp_forward(spec, teacher, &x)?.into_iter().map(f64::tanh).collect();
            Ok(Sample { x, y })
        })
        .collect()
}

/// Task-A and task-B datasets for `seed`, using `cfg`'s teachers.
pub fn make_two_task_data_with(cfg: &TwoTaskConfig, seed: u64) -> Result<(Batch, Batch)> {
    if cfg.n_per_task == 0 {
        return Err(MofoError::InvalidArgument("n_per_task must be >= 1".into()));
    }
    let (spec, teacher_a, teacher_b) = teacher_pair(cfg)?;
    let mut r = rng::seeded(seed, streams::DATA);
    let (lo, hi) = cfg.task_b_inputs;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(MofoError::InvalidArgument(format!(
            "task-B input range [{lo}, {hi}] is empty"
        )));
    }
    let mut inputs = |n: usize, lo: f64, hi: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..spec.input).map(|_| r.random_range(lo..=hi)).collect())
            .collect()
    };
    if !(cfg.task_b_noise.is_finite() && cfg.task_b_noise >= 0.0) {
        return Err(MofoError::InvalidArgument(format!(
            "task_b_noise {} must be >= 0",
            cfg.task_b_noise
        )));
    }
    let xa = inputs(cfg.n_per_task, -1.0, 1.0);
    let xb = inputs(cfg.n_per_task, lo, hi);
    let mut task_b = label(&spec, &teacher_b, xb)?;
    if cfg.task_b_noise > 0.0 {
        let half_width = cfg.task_b_noise * 3f64.sqrt();
        for y in task_b.iter_mut().flat_map(|s| s.y.iter_mut()) {
            *y += r.random_range(-half_width..=half_width);
        }
    }
    Ok((label(&spec, &teacher_a, xa)?, task_b))
}

/// Task-A and task-B datasets with the default 2-input, 1-output teachers.
pub fn make_two_task_data(seed: u64, n_per_task: usize) -> Result<(Batch, Batch)> {
    let cfg = TwoTaskConfig {
        n_per_task,
        ..TwoTaskConfig::default()
    };
    make_two_task_data_with(&cfg, seed)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub theta: PartitionedVector,
    pub steps: u64,
    pub loss: f64,
}

/// Full-batch Adam on `data` from a seeded small init until the loss drops
/// below `cfg.pretrain_threshold`.
pub fn pretrain(cfg: &TwoTaskConfig, data: &[Sample], seed: u64) -> Result<PretrainOutcome> {
    let spec = cfg.student;
    let mut theta = spec.init(&mut rng::seeded(seed, streams::INIT), cfg.init_scale)?;
    let h = HyperParams {
        lr: LrSchedule::Constant(cfg.pretrain_lr),
        ..HyperParams::default()
    };
    let mut state = OptimizerState::new(theta.layout().clone());
    for step in 0..cfg.pretrain_max_steps {
        let (loss, grad) = mlp_loss_and_grad(&spec, &theta, data)?;
        if loss < cfg.pretrain_threshold {
            return Ok(PretrainOutcome { theta, steps: step, loss });
        }
        theta = adam_step(&theta, &grad, &mut state, &h)?.0;
    }
    let loss = mlp_loss(&spec, &theta, data)?;
    if loss < cfg.pretrain_threshold {
        return Ok(PretrainOutcome {
            theta,
            steps: cfg.pretrain_max_steps,
            loss,
        });
    }
    Err(MofoError::Numeric {
        step: cfg.pretrain_max_steps,
        reason: format!(
            "pretraining loss {loss:.3e} above threshold {:.1e}",
            cfg.pretrain_threshold
        ),
    })
}

/// Fine-tune on task B starting from a model pretrained on task A.
#[derive(Debug, Clone)]
pub struct TwoTaskProblem {
    cfg: TwoTaskConfig,
    layout: Arc<BlockLayout>,
    task_a: Batch,
    task_b: Batch,
    theta0: PartitionedVector,
    pretrain_steps: u64,
    seed: u64,
}

impl TwoTaskProblem {
    pub fn new(cfg: TwoTaskConfig, seed: u64) -> Result<Self> {
        if cfg.batch_size == Some(0) {
            return Err(MofoError::InvalidArgument("batch size must be >= 1".into()));
        }
        let (task_a, task_b) = make_two_task_data_with(&cfg, seed)?;
        let pre = pretrain(&cfg, &task_a, seed)?;
        Ok(Self {
            layout: pre.theta.layout().clone(),
            theta0: pre.theta,
            pretrain_steps: pre.steps,
            cfg,
            task_a,
            task_b,
            seed,
        })
    }

    pub fn config(&self) -> &TwoTaskConfig {
        &self.cfg
    }

    pub fn task_a(&self) -> &[Sample] {
        &self.task_a
    }

    pub fn task_b(&self) -> &[Sample] {
        &self.task_b
    }

    pub fn pretrain_steps(&self) -> u64 {
        self.pretrain_steps
    }

    /// Deterministic mini-batch for step `t`: epoch-wise shuffles seeded by
    /// the run seed and the epoch index.
    fn minibatch(&self, t: u64, size: usize) -> Batch {
        let n = self.task_b.len();
        let size = size.min(n);
        let per_epoch = n.div_ceil(size) as u64;
        let step = t.saturating_sub(1);
        let (epoch, slot) = (step / per_epoch, (step % per_epoch) as usize);
        let mut order: Vec<usize> = (0..n).collect();
        let mut r = rng::seeded(self.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15), streams::SHUFFLE);
        order.shuffle(&mut r);
        order[slot * size..((slot + 1) * size).min(n)]
            .iter()
            .map(|&i| self.task_b[i].clone())
            .collect()
    }
}

impl Problem for TwoTaskProblem {
    fn name(&self) -> &str {
        "two-task-mlp"
    }

    fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    fn theta0(&self) -> &PartitionedVector {
        &self.theta0
    }

    fn loss(&self, theta: &PartitionedVector) -> Result<f64> {
        mlp_loss(&self.cfg.student, theta, &self.task_b)
    }

    fn grad(&self, theta: &PartitionedVector) -> Result<PartitionedVector> {
        Ok(self.loss_and_grad(theta)?.1)
    }

    fn loss_and_grad(&self, theta: &PartitionedVector) -> Result<(f64, PartitionedVector)> {
        mlp_loss_and_grad(&self.cfg.student, theta, &self.task_b)
    }

    fn loss_and_grad_at(&self, theta: &PartitionedVector, t: u64) -> Result<(f64, PartitionedVector)> {
        match self.cfg.batch_size {
            None => self.loss_and_grad(theta),
            Some(size) => {
                let (_, grad) = mlp_loss_and_grad(&self.cfg.student, theta, &self.minibatch(t, size))?;
                Ok((self.loss(theta)?, grad))
            }
        }
    }

    fn aux_loss(&self, theta: &PartitionedVector) -> Result<f64> {
        mlp_loss(&self.cfg.student, theta, &self.task_a)
    }
}
