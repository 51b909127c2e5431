//! The acceptance checks, shared by the `verify` subcommand and the test
//! suite. Each check reports pass/fail with a one-line detail.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;

use super::config::{ExperimentConfig, ProblemConfig};
use super::run::{run_experiment, run_on, trace_csv};
use crate::error::Result;
use crate::filter::{masked_l1, top_alpha_mask, top_alpha_mask_of, top_alpha_norm};
use crate::metrics::convergence_envelope;
use crate::optimizers::{HyperParams, LrSchedule, OptimizerKind, VariantKind};
use crate::partition::{BlockLayout, PartitionedVector};
use crate::problems::{
    mlp_loss_and_grad, Example1Spec, MlpSpec, Problem, Sample, TwoTaskConfig, TwoTaskProblem,
};
use crate::regularizers::{regularized_loss_and_grad, RegKind, RegSpec};
use crate::rng::{self, streams};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<22} {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

pub type Check = fn() -> CheckOutcome;

pub const CHECKS: [(u8, &str, Check); 11] = [
    (1, "example1-2d", check_example1_2d),
    (2, "example1-random-draws", check_example1_draws),
    (3, "norm-axioms", check_norm_axioms),
    (4, "filter-perturbation", check_filter_perturbation),
    (5, "update-bound", check_update_bound),
    (6, "adam-equivalence", check_adam_equivalence),
    (7, "convergence-envelope", check_envelope),
    (8, "gradient-oracles", check_gradients),
    (9, "two-task-forgetting", check_forgetting),
    (10, "stability-ablation", check_stability),
    (11, "mask-fuzz", check_mask_fuzz),
];

pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS.iter().map(|(_, _, check)| check()).collect()
}

fn timed(id: u8, name: &'static str, limit: Option<f64>, body: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (mut passed, mut detail) = match body() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed.as_secs_f64() >= limit {
            passed = false;
            detail.push_str(&format!("; over the {limit}s budget"));
        }
    }
    CheckOutcome { id, name, passed, detail, elapsed }
}

fn example1(a: Vec<f64>, b: Vec<f64>, kind: OptimizerKind, alpha: f64, lr: LrSchedule, steps: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        problem: ProblemConfig::Example1 { a, b },
        optimizer: kind,
        steps,
        ..ExperimentConfig::default()
    };
    cfg.hyper.alpha_pct = alpha;
    cfg.hyper.lr = lr;
    cfg
}

/// Named configurations used by the checks and exposed on the command line.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    Some(match name {
        "example1-2d" => example1(vec![1.0; 2], vec![1.0; 2], OptimizerKind::Mofo, 50.0, LrSchedule::Constant(1e-2), 50_000),
        "example1-d5" => example1(
            vec![1.0, 1.5, 0.8, 1.2, 2.0],
            vec![1.2, 1.0, 1.5, 0.9, 1.8],
            OptimizerKind::Mofo,
            20.0,
            LrSchedule::Constant(1e-3),
            5_000,
        ),
        "example1-d4-envelope" => example1(
            vec![1.0, 2.0, 1.5, 0.8],
            vec![1.0, 1.5, 2.0, 1.0],
            OptimizerKind::Mofo,
            25.0,
            LrSchedule::InverseSqrt(3e-3),
            10_000,
        ),
        "two-task-mlp" => ExperimentConfig {
            problem: ProblemConfig::TwoTask(two_task_config()),
            optimizer: OptimizerKind::Mofo,
            steps: 2_000,
            hyper: HyperParams { lr: LrSchedule::Constant(TWO_TASK_LR), ..HyperParams::default() },
            ..ExperimentConfig::default()
        },
        _ => return None,
    })
}

pub const PRESETS: [&str; 4] = ["example1-2d", "example1-d5", "example1-d4-envelope", "two-task-mlp"];

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn check_example1_2d() -> CheckOutcome {
    timed(1, "example1-2d", Some(5.0), || {
        let mofo_cfg = preset("example1-2d").expect("preset");
        let adam_cfg = ExperimentConfig { optimizer: OptimizerKind::Adam, ..mofo_cfg.clone() };
        let mofo = run_experiment(&mofo_cfg)?;
        let adam = run_experiment(&adam_cfg)?;
        let (tm, ta) = (mofo.final_theta.as_slice(), adam.final_theta.as_slice());
        let (lm, la) = (mofo.summary.final_aux_loss, adam.summary.final_aux_loss);
        let ok = dist(tm, &[1.0, 0.0]) <= 1e-3
            && dist(ta, &[1.0, 1.0]) <= 1e-2
            && (lm - 0.5).abs() <= 0.02 * 0.5
            && (la - 1.0).abs() <= 0.02;
        Ok((
            ok,
            format!(
                "mofo ({:.6}, {:.6}) pretrain loss {lm:.6}; adam ({:.6}, {:.6}) pretrain loss {la:.6}",
                tm[0], tm[1], ta[0], ta[1]
            ),
        ))
    })
}

pub fn check_example1_draws() -> CheckOutcome {
    timed(2, "example1-random-draws", Some(60.0), || {
        let mut r = rng::seeded(0xD8A5, streams::DATA);
        let mut failures = Vec::new();
        let mut worst = 0.0f64;
        for draw in 0..50 {
            let d = r.random_range(3..=8usize);
            let a: Vec<f64> = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
            let spec = Example1Spec::new(a.clone(), b.clone())?;
            let i0 = spec.nearest_hyperplane();
            let mut target = vec![0.0; d];
            target[i0] = b[i0] / a[i0];
            let lr = LrSchedule::Constant(1e-3);
            let mofo = run_experiment(&example1(a.clone(), b.clone(), OptimizerKind::Mofo, 100.0 / d as f64, lr, 20_000))?;
            let adam = run_experiment(&example1(a, b, OptimizerKind::Adam, 100.0, lr, 20_000))?;
            let err = dist(mofo.final_theta.as_slice(), &target);
            worst = worst.max(err);
            if err > 1e-3 || norm2(mofo.final_theta.as_slice()) >= norm2(adam.final_theta.as_slice()) {
                failures.push(draw);
            }
        }
        Ok((
            failures.is_empty(),
            format!("50 draws, worst coordinate error {worst:.2e}, failing draws {failures:?}"),
        ))
    })
}

fn random_vector(r: &mut rng::RunRng, layout: &std::sync::Arc<BlockLayout>) -> Result<PartitionedVector> {
    let scale = 10f64.powf(r.random_range(-3.0..3.0));
    let values = (0..layout.dim())
        .map(|_| {
            // A share of exact zeros and repeated magnitudes exercises ties.
            match r.random_range(0..10) {
                0 => 0.0,
                1 => scale,
                _ => scale * r.random_range(-1.0..1.0),
            }
        })
        .collect();
    PartitionedVector::new(layout.clone(), values)
}

fn random_layout(r: &mut rng::RunRng) -> Result<std::sync::Arc<BlockLayout>> {
    let blocks = r.random_range(1..=4usize);
    BlockLayout::shared((0..blocks).map(|k| (format!("b{k}"), r.random_range(1..=12usize))))
}

fn random_alpha(r: &mut rng::RunRng) -> f64 {
    const GRID: [f64; 6] = [1.0, 10.0, 25.0, 50.0, 100.0 / 3.0, 100.0];
    if r.random_bool(0.5) {
        GRID[r.random_range(0..GRID.len())]
    } else {
        r.random_range(0.1..=100.0)
    }
}

pub fn check_norm_axioms() -> CheckOutcome {
    timed(3, "norm-axioms", None, || {
        const RTOL: f64 = 1e-12;
        let mut r = rng::seeded(0xA710, streams::DATA);
        let mut bad = Vec::new();
        for case in 0..1000 {
            let layout = random_layout(&mut r)?;
            let alpha = random_alpha(&mut r);
            let x = random_vector(&mut r, &layout)?;
            let y = random_vector(&mut r, &layout)?;
            let c = if case % 10 == 0 { 0.0 } else { r.random_range(0.0..100.0) };
            let nx = top_alpha_norm(&x, alpha)?;
            let ny = top_alpha_norm(&y, alpha)?;
            let definite = (nx == 0.0) == x.as_slice().iter().all(|v| *v == 0.0)
                && top_alpha_norm(&PartitionedVector::zeros(layout.clone()), alpha)? == 0.0;
            let ncx = top_alpha_norm(&x.scale(c)?, alpha)?;
            let homogeneous = (ncx - c * nx).abs() <= RTOL * (c * nx).max(f64::MIN_POSITIVE);
            let nxy = top_alpha_norm(&x.add(&y)?, alpha)?;
            let triangle = nxy <= (nx + ny) * (1.0 + RTOL);
            if !(definite && homogeneous && triangle) {
                bad.push(case);
            }
        }
        Ok((bad.is_empty(), format!("1000 tuples, violations {bad:?}")))
    })
}

pub fn check_filter_perturbation() -> CheckOutcome {
    timed(4, "filter-perturbation", None, || {
        let mut r = rng::seeded(0xB2, streams::DATA);
        let mut bad = Vec::new();
        let mut tightest = f64::INFINITY;
        for case in 0..1000 {
            let layout = random_layout(&mut r)?;
            let alpha = random_alpha(&mut r);
            let x = random_vector(&mut r, &layout)?;
            let y = if case % 4 == 0 {
                // Nearby y, where the masks differ in only a few places.
                let noise = random_vector(&mut r, &layout)?.scale(1e-3)?;
                x.add(&noise)?
            } else {
                random_vector(&mut r, &layout)?
            };
            let lhs = masked_l1(&x, &top_alpha_mask(&x, alpha)?) - masked_l1(&x, &top_alpha_mask(&y, alpha)?);
            let rhs = 2.0 * x.sub(&y)?.norm_l1() + 1e-12;
            tightest = tightest.min(rhs - lhs);
            if lhs > rhs {
                bad.push(case);
            }
        }
        Ok((bad.is_empty(), format!("1000 tuples, smallest slack {tightest:.3e}, violations {bad:?}")))
    })
}

fn theory_config(problem: ProblemConfig, steps: u64) -> ExperimentConfig {
    ExperimentConfig {
        problem,
        optimizer: OptimizerKind::Mofo,
        steps,
        hyper: HyperParams::theory(1e-2, 10.0),
        ..ExperimentConfig::default()
    }
}

pub fn check_update_bound() -> CheckOutcome {
    timed(5, "update-bound", None, || {
        let ex = theory_config(
            ProblemConfig::Example1 {
                a: vec![1.0, 1.5, 0.8, 1.2, 2.0],
                b: vec![1.2, 1.0, 1.5, 0.9, 1.8],
            },
            10_000,
        );
        let mlp = theory_config(ProblemConfig::TwoTask(TwoTaskConfig::default()), 10_000);
        let mut details = Vec::new();
        let mut ok = true;
        for (name, cfg) in [("example1 d=5", ex), ("mlp", mlp)] {
            let rec = run_experiment(&cfg)?;
            ok &= rec.lemma_violations == 0 && rec.rows.len() == 10_000;
            details.push(format!("{name}: {} violations in {} steps", rec.lemma_violations, rec.rows.len()));
        }
        Ok((ok, details.join("; ")))
    })
}

pub fn check_adam_equivalence() -> CheckOutcome {
    timed(6, "adam-equivalence", None, || {
        let mut mismatches = Vec::new();
        let mut compared = 0;
        for name in ["example1-2d", "example1-d5", "two-task-mlp"] {
            let base = preset(name).expect("preset");
            let problems: Vec<(u64, Box<dyn Problem>)> = [0u64, 1]
                .into_iter()
                .map(|seed| Ok((seed, base.problem.build(seed)?)))
                .collect::<Result<_>>()?;
            for (seed, problem) in &problems {
                let steps = base.steps.min(2_000);
                let mofo = ExperimentConfig { seed: *seed, steps, ..base.clone() };
                let mut mofo = mofo;
                mofo.hyper.alpha_pct = 100.0;
                let adam = ExperimentConfig { optimizer: OptimizerKind::Adam, ..mofo.clone() };
                let a = trace_csv(&run_on(problem.as_ref(), &mofo).map_err(|f| f.error)?.rows);
                let b = trace_csv(&run_on(problem.as_ref(), &adam).map_err(|f| f.error)?.rows);
                compared += 1;
                if a.as_bytes() != b.as_bytes() {
                    mismatches.push(format!("{name}/seed{seed}"));
                }
            }
        }
        Ok((mismatches.is_empty(), format!("{compared} trace pairs, mismatches {mismatches:?}")))
    })
}

pub fn check_envelope() -> CheckOutcome {
    timed(7, "convergence-envelope", Some(30.0), || {
        let rec = run_experiment(&preset("example1-d4-envelope").expect("preset"))?;
        let env = convergence_envelope(&rec)?;
        let monotone = env.curve.windows(2).all(|w| w[1].1 <= w[0].1);
        let slope = env.slope.unwrap_or(f64::NAN);
        Ok((
            monotone && env.consistent_with_rate() == Some(true),
            format!(
                "min grad_inf {:.3e} at T={}, slope over [1e3, 1e4] {slope:.3}",
                env.curve.last().map(|c| c.1).unwrap_or(f64::NAN),
                env.curve.len()
            ),
        ))
    })
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

/// Worst relative error of `grad` against central differences of `loss`.
fn fd_worst(x: &[f64], grad: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        p[i] = x[i] + h;
        let up = loss(&p);
        p[i] = x[i] - h;
        let down = loss(&p);
        p[i] = x[i];
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * h)));
    }
    worst
}

pub fn check_gradients() -> CheckOutcome {
    timed(8, "gradient-oracles", None, || {
        const TOL: f64 = 1e-5;
        let mut r = rng::seeded(0x6FD, streams::DATA);
        let mut worst = [0.0f64; 4];

        for _ in 0..200 {
            let d = r.random_range(2..=6usize);
            let a: Vec<f64> = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
            // Keep each factor away from zero so the product is smooth at scale h.
            let x: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(a, b)| {
                    let off = r.random_range(0.05..1.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
                    b / a + off
                })
                .collect();
            let spec = Example1Spec::new(a, b)?;
            let g = spec.grad_slice(&x)?;
            worst[0] = worst[0].max(fd_worst(&x, &g, |p| spec.loss_slice(p).expect("dims")));
        }

        for (slot, kind) in [(1, RegKind::L1), (2, RegKind::L2)] {
            for _ in 0..200 {
                let layout = BlockLayout::shared([("w", r.random_range(1..=5usize)), ("b", 2)])?;
                let theta0 = random_vector(&mut r, &layout)?;
                let lambda = r.random_range(0.01..5.0);
                // Differences bounded away from the L1 kink.
                let offsets: Vec<f64> = (0..layout.dim())
                    .map(|_| r.random_range(0.01..2.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 })
                    .collect();
                let theta = theta0.add(&theta0.with_values(offsets)?)?;
                let spec = RegSpec::new(kind, lambda, theta0.clone())?;
                let zero = PartitionedVector::zeros(layout.clone());
                let (_, g) = regularized_loss_and_grad(0.0, &zero, &theta, &spec)?;
                let loss = |p: &[f64]| {
                    spec.penalty(&PartitionedVector::new(layout.clone(), p.to_vec()).expect("finite"))
                        .expect("layout")
                };
                worst[slot] = worst[slot].max(fd_worst(theta.as_slice(), g.as_slice(), loss));
            }
        }

        let spec = MlpSpec::new(2, 16, 1)?;
        for _ in 0..200 {
            let scale = r.random_range(0.5..2.0);
            let theta = spec.init(&mut r, scale)?;
            let batch: Vec<Sample> = (0..8)
                .map(|_| Sample {
                    x: vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                    y: vec![r.random_range(-1.0..1.0)],
                })
                .collect();
            let (_, g) = mlp_loss_and_grad(&spec, &theta, &batch)?;
            let layout = theta.layout().clone();
            let loss = |p: &[f64]| {
                let t = PartitionedVector::new(layout.clone(), p.to_vec()).expect("finite");
                crate::problems::mlp_loss_and_grad(&spec, &t, &batch).expect("batch").0
            };
            worst[3] = worst[3].max(fd_worst(theta.as_slice(), g.as_slice(), loss));
        }

        Ok((
            worst.iter().all(|w| *w < TOL),
            format!(
                "worst relative error: example1 {:.2e}, l1 {:.2e}, l2 {:.2e}, mlp {:.2e}",
                worst[0], worst[1], worst[2], worst[3]
            ),
        ))
    })
}

/// Two-task configuration used by the forgetting and stability checks.
pub fn two_task_config() -> TwoTaskConfig {
    TwoTaskConfig::default()
}

/// Fine-tuning learning rate for the two-task checks.
pub const TWO_TASK_LR: f64 = 1e-3;

fn two_task_run(problem: &TwoTaskProblem, seed: u64, kind: OptimizerKind, alpha: f64) -> Result<crate::metrics::RunSummary> {
    let mut cfg = ExperimentConfig {
        problem: ProblemConfig::TwoTask(problem.config().clone()),
        optimizer: kind,
        steps: 2_000,
        seed,
        ..ExperimentConfig::default()
    };
    cfg.hyper.lr = LrSchedule::Constant(TWO_TASK_LR);
    cfg.hyper.alpha_pct = alpha;
    Ok(run_on(problem, &cfg).map_err(|f| f.error)?.summary)
}

pub fn check_forgetting() -> CheckOutcome {
    timed(9, "two-task-forgetting", Some(60.0), || {
        let mut ok = true;
        let mut details = Vec::new();
        for seed in 0..3 {
            let problem = TwoTaskProblem::new(two_task_config(), seed)?;
            let a0 = problem.aux_loss(problem.theta0())?;
            let adam = two_task_run(&problem, seed, OptimizerKind::Adam, 100.0)?;
            let mofo = two_task_run(&problem, seed, OptimizerKind::Mofo, 10.0)?;
            let (fa, fm) = (adam.final_aux_loss - a0, mofo.final_aux_loss - a0);
            let pass = mofo.final_distance < adam.final_distance
                && fm < fa
                && mofo.final_loss <= 1.25 * adam.final_loss;
            ok &= pass;
            details.push(format!(
                "seed {seed}: D {:.3}/{:.3} forget {fm:.2e}/{fa:.2e} taskB {:.2e}/{:.2e}",
                mofo.final_distance, adam.final_distance, mofo.final_loss, adam.final_loss
            ));
        }
        Ok((ok, format!("mofo/adam {}", details.join("; "))))
    })
}

pub fn check_stability() -> CheckOutcome {
    timed(10, "stability-ablation", None, || {
        let mut wins = 0;
        let mut details = Vec::new();
        for seed in 0..3 {
            let problem = TwoTaskProblem::new(two_task_config(), seed)?;
            let frac = |kind| -> Result<f64> {
                Ok(two_task_run(&problem, seed, kind, 3.0)?.significant_change_fraction)
            };
            let mofo = frac(OptimizerKind::Mofo)?;
            let mv = frac(OptimizerKind::Variant(VariantKind::MvFiltered))?;
            let grad = frac(OptimizerKind::Variant(VariantKind::GradFiltered))?;
            let gv = frac(OptimizerKind::Variant(VariantKind::GvFiltered))?;
            if mofo < mv && grad < gv {
                wins += 1;
            }
            details.push(format!("seed {seed}: mofo {mofo:.3} mv {mv:.3} grad {grad:.3} gv {gv:.3}"));
        }
        Ok((wins >= 2, format!("{wins}/3 seeds ordered; {}", details.join("; "))))
    })
}

/// Independent selection oracle: full sort by (magnitude desc, index asc).
fn oracle_mask(values: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].abs().total_cmp(&values[i].abs()).then(i.cmp(&j)));
    let mut mask = vec![false; values.len()];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

pub fn check_mask_fuzz() -> CheckOutcome {
    timed(11, "mask-fuzz", None, || {
        let mut r = rng::seeded(0x11, streams::DATA);
        let mut bad = 0usize;
        let mut first_bad = None;
        for case in 0..100_000u64 {
            let layout = random_layout(&mut r)?;
            // α = k/1000 percent, so the exact count is an integer ceiling.
            let milli = r.random_range(1..=100_000u64);
            let alpha = milli as f64 / 1000.0;
            let values: Vec<f64> = (0..layout.dim())
                .map(|_| match r.random_range(0..3) {
                    0 => r.random_range(-1.0..1.0),
                    // Small integer set: plenty of exact and sign-flipped ties.
                    _ => (r.random_range(-3..=3i32)) as f64,
                })
                .collect();
            let mask = top_alpha_mask_of(&layout, &values, alpha)?;
            let again = top_alpha_mask_of(&layout, &values, alpha)?;
            let mut ok = mask == again;
            for (k, (_, range)) in layout.blocks().enumerate() {
                let d = range.len() as u64;
                let expected = ((d * milli).div_ceil(100_000)).max(1) as usize;
                ok &= mask.counts_per_block()[k] == expected;
                ok &= mask.bits()[range.clone()] == oracle_mask(&values[range], expected)[..];
            }
            if !ok {
                bad += 1;
                first_bad.get_or_insert(case);
            }
        }
        Ok((bad == 0, format!("100000 cases, {bad} mismatches (first {first_bad:?})")))
    })
}
