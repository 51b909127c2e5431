//! Single-run driver and its CSV trace.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use crate::error::{MofoError, Result};
use crate::metrics::{
    block_distance, significant_change_fraction, RunRecord, RunSummary, StepRow,
    SIGNIFICANT_CHANGE_THRESHOLD,
};
use crate::optimizers::{check_lemma_bound, Optimizer};
use crate::problems::Problem;
use crate::regularizers::{regularized_loss_and_grad, RegSpec};

pub const CSV_HEADER: &str = "t,lr,loss,aux_loss,grad_inf,distance,mask_count_total";

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// A run that stopped early on a numeric failure. `rows` holds every
/// completed step followed by one diagnostic row for the failing step.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub rows: Vec<StepRow>,
    pub error: MofoError,
}

/// Builds the problem from `cfg` and runs it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let problem = cfg.problem.build(cfg.seed)?;
    run_on(problem.as_ref(), cfg).map_err(|f| f.error)
}

/// Runs `cfg`'s optimizer on an already-built problem. The problem settings
/// in `cfg` are ignored.
pub fn run_on(problem: &dyn Problem, cfg: &ExperimentConfig) -> std::result::Result<RunRecord, RunFailure> {
    let fail = |rows: Vec<StepRow>, error| RunFailure { rows, error };
    if let Err(e) = cfg.validate() {
        return Err(fail(Vec::new(), e));
    }
    let theta0 = problem.theta0().clone();
    let layout = problem.layout().clone();
    let reg = match RegSpec::new(cfg.reg_kind, cfg.reg_lambda, theta0.clone()) {
        Ok(r) => r,
        Err(e) => return Err(fail(Vec::new(), e)),
    };
    let mut opt = match Optimizer::new(cfg.optimizer, cfg.hyper.clone(), layout.clone(), cfg.seed) {
        Ok(o) => o,
        Err(e) => return Err(fail(Vec::new(), MofoError::Config(e.to_string()))),
    };

    let mut theta = theta0.clone();
    let mut rows = Vec::with_capacity(cfg.steps as usize);
    let mut lemma_violations = 0;
    for t in 1..=cfg.steps {
        let lr = cfg.hyper.lr.rate(t);
        let step = (|| -> Result<StepRow> {
            let (loss, grad) = problem.loss_and_grad_at(&theta, t)?;
            if !loss.is_finite() {
                return Err(MofoError::Numeric {
                    step: t,
                    reason: format!("non-finite loss {loss}"),
                });
            }
            let (_, grad) = regularized_loss_and_grad(loss, &grad, &theta, &reg)?;
            let (next, report) = opt.step(&theta, &grad).map_err(|e| numeric(t, e))?;
            if cfg.hyper.theory_mode && !check_lemma_bound(&report, &cfg.hyper, &layout, t)? {
                lemma_violations += 1;
            }
            let aux_loss = problem.aux_loss(&next)?;
            let row = StepRow {
                t,
                lr,
                loss,
                aux_loss,
                grad_inf: grad.norm_inf(),
                distance: block_distance(&next, &theta0)?,
                mask_counts: report.mask_counts,
            };
            theta = next;
            Ok(row)
        })();
        match step {
            Ok(row) => rows.push(row),
            Err(error) => {
                rows.push(StepRow {
                    t,
                    lr,
                    loss: f64::NAN,
                    aux_loss: f64::NAN,
                    grad_inf: f64::NAN,
                    distance: f64::NAN,
                    mask_counts: Vec::new(),
                });
                return Err(fail(rows, error));
            }
        }
    }

    let summary = (|| -> Result<RunSummary> {
        let final_loss = problem.loss(&theta)?;
        if !final_loss.is_finite() {
            return Err(MofoError::Numeric {
                step: cfg.steps,
                reason: format!("non-finite final loss {final_loss}"),
            });
        }
        Ok(RunSummary {
            min_grad_inf: rows.iter().map(|r| r.grad_inf).fold(f64::INFINITY, f64::min),
            final_loss,
            final_aux_loss: problem.aux_loss(&theta)?,
            final_distance: block_distance(&theta, &theta0)?,
            significant_change_fraction: significant_change_fraction(
                &theta,
                &theta0,
                SIGNIFICANT_CHANGE_THRESHOLD,
            )?,
        })
    })();
    match summary {
        Ok(summary) => Ok(RunRecord {
            rows,
            summary,
            final_theta: theta,
            inverse_sqrt_lr: cfg.hyper.lr.is_inverse_sqrt(),
            lemma_violations,
        }),
        Err(error) => Err(fail(rows, error)),
    }
}

/// Optimizer errors during a run are reported as numeric failures at `t`.
fn numeric(t: u64, e: MofoError) -> MofoError {
    match e {
        MofoError::Numeric { .. } => e,
        other => MofoError::Numeric {
            step: t,
            reason: other.to_string(),
        },
    }
}

pub fn trace_csv(rows: &[StepRow]) -> String {
    let mut out = String::with_capacity(64 + rows.len() * 128);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            fmt_f64(r.lr),
            fmt_f64(r.loss),
            fmt_f64(r.aux_loss),
            fmt_f64(r.grad_inf),
            fmt_f64(r.distance),
            r.mask_count_total()
        );
    }
    out
}

pub fn write_trace_csv(path: &Path, rows: &[StepRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, trace_csv(rows))?;
    Ok(())
}

/// Parses a trace written by [`trace_csv`]. Mask counts come back as a
/// single total.
pub fn read_trace_csv(text: &str) -> Result<Vec<StepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(MofoError::Config("trace has an unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || MofoError::Config(format!("trace line {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(StepRow {
                t: f[0].parse().map_err(|_| bad())?,
                lr: num(f[1])?,
                loss: num(f[2])?,
                aux_loss: num(f[3])?,
                grad_inf: num(f[4])?,
                distance: num(f[5])?,
                mask_counts: vec![f[6].parse().map_err(|_| bad())?],
            })
        })
        .collect()
}

pub fn summary_text(cfg: &ExperimentConfig, record: &RunRecord) -> String {
    let s = &record.summary;
    let mut out = String::new();
    let _ = writeln!(out, "problem = {}", cfg.problem.name());
    let _ = writeln!(out, "optimizer = {}", cfg.optimizer);
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "steps = {}", cfg.steps);
    let _ = writeln!(out, "final_loss = {}", fmt_f64(s.final_loss));
    let _ = writeln!(out, "final_aux_loss = {}", fmt_f64(s.final_aux_loss));
    let _ = writeln!(out, "final_distance = {}", fmt_f64(s.final_distance));
    let _ = writeln!(out, "min_grad_inf = {}", fmt_f64(s.min_grad_inf));
    let _ = writeln!(
        out,
        "significant_change_fraction = {}",
        fmt_f64(s.significant_change_fraction)
    );
    let theta: Vec<String> = record.final_theta.as_slice().iter().map(|x| fmt_f64(*x)).collect();
    if theta.len() <= 32 {
        let _ = writeln!(out, "final_theta = {}", theta.join(","));
    }
    if cfg.hyper.theory_mode {
        let _ = writeln!(out, "lemma_violations = {}", record.lemma_violations);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ProblemConfig;
    use crate::optimizers::{LrSchedule, OptimizerKind};

    fn ex1(kind: OptimizerKind, steps: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            optimizer: kind,
            steps,
            ..ExperimentConfig::default()
        };
        cfg.hyper.lr = LrSchedule::Constant(1e-2);
        cfg.hyper.alpha_pct = 50.0;
        cfg
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(0.01), "1.0000000000000000e-2");
    }

    #[test]
    fn first_row_of_mofo_on_example1() {
        let rec = run_experiment(&ex1(OptimizerKind::Mofo, 3)).unwrap();
        let r = &rec.rows[0];
        assert_eq!((r.t, r.loss, r.grad_inf, r.mask_count_total()), (1, 1.0, 2.0, 1));
        // Only θ_1 moved, by η up to the ε in the denominator.
        assert!((r.distance - 0.01).abs() < 1e-9);
        assert!((r.aux_loss - 0.5 * 0.01 * 0.01).abs() < 1e-12);
    }

    #[test]
    fn csv_is_deterministic_and_parses_back() {
        let a = trace_csv(&run_experiment(&ex1(OptimizerKind::Mofo, 50)).unwrap().rows);
        let b = trace_csv(&run_experiment(&ex1(OptimizerKind::Mofo, 50)).unwrap().rows);
        assert_eq!(a, b);
        assert!(a.starts_with("t,lr,loss,aux_loss,grad_inf,distance,mask_count_total\n"));
        let rows = read_trace_csv(&a).unwrap();
        assert_eq!(rows.len(), 50);
        assert_eq!(trace_csv(&rows), a);
    }

    #[test]
    fn theory_mode_counts_no_violations() {
        let mut cfg = ex1(OptimizerKind::Mofo, 200);
        cfg.problem = ProblemConfig::Example1 { a: vec![1.0, 2.0, 0.5], b: vec![1.0; 3] };
        cfg.hyper.epsilon = 0.0;
        cfg.hyper.theory_mode = true;
        cfg.hyper.lr = LrSchedule::InverseSqrt(1e-2);
        let rec = run_experiment(&cfg).unwrap();
        assert_eq!(rec.lemma_violations, 0);
        assert!(rec.inverse_sqrt_lr);
    }

    struct Blowup;

    impl Problem for Blowup {
        fn name(&self) -> &str {
            "blowup"
        }
        fn layout(&self) -> &std::sync::Arc<crate::partition::BlockLayout> {
            static L: std::sync::OnceLock<std::sync::Arc<crate::partition::BlockLayout>> =
                std::sync::OnceLock::new();
            L.get_or_init(|| crate::partition::BlockLayout::shared([("x", 1)]).unwrap())
        }
        fn theta0(&self) -> &crate::partition::PartitionedVector {
            static T: std::sync::OnceLock<crate::partition::PartitionedVector> = std::sync::OnceLock::new();
            T.get_or_init(|| crate::partition::PartitionedVector::zeros(Blowup.layout().clone()))
        }
        fn loss(&self, theta: &crate::partition::PartitionedVector) -> Result<f64> {
            // Finite at the start, infinite once θ leaves zero.
            Ok(if theta.as_slice()[0] == 0.0 { 1.0 } else { f64::INFINITY })
        }
        fn grad(&self, theta: &crate::partition::PartitionedVector) -> Result<crate::partition::PartitionedVector> {
            crate::partition::PartitionedVector::filled(theta.layout().clone(), 1.0)
        }
        fn aux_loss(&self, _: &crate::partition::PartitionedVector) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic_row() {
        let cfg = ex1(OptimizerKind::Adam, 10);
        let failure = run_on(&Blowup, &cfg).unwrap_err();
        assert!(matches!(failure.error, MofoError::Numeric { step: 2, .. }));
        assert_eq!(failure.rows.len(), 2);
        assert!(failure.rows[1].loss.is_nan());
        let csv = trace_csv(&failure.rows);
        assert!(csv.lines().last().unwrap().starts_with("2,"));
    }
}
