//! Grid sweeps over α or the regularization strength.

use std::fmt::Write as _;
use std::sync::Mutex;

use super::config::{validate_grid, ExperimentConfig, GridParam};
use super::run::{fmt_f64, run_on};
use crate::error::{MofoError, Result};
use crate::problems::Problem;
use crate::regularizers::RegKind;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub final_loss: f64,
    pub final_aux_loss: f64,
    pub distance: f64,
    /// `None` on success, otherwise why the cell failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub param: GridParam,
    /// Sorted by `value`.
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn ok_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.error.is_none())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},final_loss,final_aux_loss,distance,status\n", self.param.name());
        for r in &self.rows {
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("failed: {}", e.replace([',', '\n'], " ")),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(r.value),
                fmt_f64(r.final_loss),
                fmt_f64(r.final_aux_loss),
                fmt_f64(r.distance),
                status
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let param = match header.split(',').next() {
            Some("alpha") => GridParam::Alpha,
            Some("lambda") => GridParam::Lambda,
            _ => return Err(MofoError::Config("not a sweep table".into())),
        };
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let bad = || MofoError::Config(format!("sweep line {}: `{line}`", i + 2));
                let f: Vec<&str> = line.splitn(5, ',').collect();
                if f.len() != 5 {
                    return Err(bad());
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
                Ok(SweepRow {
                    value: num(f[0])?,
                    final_loss: num(f[1])?,
                    final_aux_loss: num(f[2])?,
                    distance: num(f[3])?,
                    error: match f[4] {
                        "ok" => None,
                        other => Some(other.trim_start_matches("failed: ").to_string()),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { param, rows })
    }
}

/// Runs one experiment per grid value on a shared problem. Cells run on
/// worker threads; results are merged back in grid order and then sorted.
/// A failing cell is recorded in its row rather than aborting the sweep.
pub fn run_pareto_sweep_on(problem: &dyn Problem, cfg: &ExperimentConfig) -> Result<SweepTable> {
    let Some((param, values)) = &cfg.grid else {
        return Err(MofoError::Config("no alpha_grid or lambda_grid configured".into()));
    };
    validate_grid(values)?;
    match param {
        GridParam::Alpha => {
            if !cfg.optimizer.uses_alpha_filter() {
                return Err(MofoError::Config(format!(
                    "optimizer `{}` has no alpha to sweep",
                    cfg.optimizer
                )));
            }
            if let Some(a) = values.iter().find(|a| !(**a > 0.0 && **a <= 100.0)) {
                return Err(MofoError::Config(format!("alpha {a} outside (0, 100]")));
            }
        }
        GridParam::Lambda => {
            if cfg.reg_kind == RegKind::None {
                return Err(MofoError::Config("lambda_grid needs reg = l1 or l2".into()));
            }
            if let Some(l) = values.iter().find(|l| **l < 0.0) {
                return Err(MofoError::Config(format!("lambda {l} must be >= 0")));
            }
        }
    }

    let cell_cfg = |value: f64| {
        let mut c = cfg.clone();
        c.grid = None;
        match param {
            GridParam::Alpha => c.hyper.alpha_pct = value,
            GridParam::Lambda => c.reg_lambda = value,
        }
        c
    };
    let run_cell = |value: f64| -> SweepRow {
        match run_on(problem, &cell_cfg(value)) {
            Ok(rec) => SweepRow {
                value,
                final_loss: rec.summary.final_loss,
                final_aux_loss: rec.summary.final_aux_loss,
                distance: rec.summary.final_distance,
                error: None,
            },
            Err(f) => SweepRow {
                value,
                final_loss: f64::NAN,
                final_aux_loss: f64::NAN,
                distance: f64::NAN,
                error: Some(f.error.to_string()),
            },
        }
    };

    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(values.len());
    let slots: Vec<Mutex<Option<SweepRow>>> = values.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("sweep index lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= values.len() {
                    break;
                }
                let row = run_cell(values[i]);
                *slots[i].lock().expect("sweep slot lock") = Some(row);
            });
        }
    });
    let mut rows: Vec<SweepRow> = slots
        .into_iter()
        .map(|m| m.into_inner().expect("sweep slot lock").expect("every cell ran"))
        .collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(SweepTable { param: *param, rows })
}

pub fn run_pareto_sweep(cfg: &ExperimentConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let problem = cfg.problem.build(cfg.seed)?;
    run_pareto_sweep_on(problem.as_ref(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::{LrSchedule, OptimizerKind};

    fn base() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            optimizer: OptimizerKind::Mofo,
            steps: 200,
            ..ExperimentConfig::default()
        };
        cfg.hyper.lr = LrSchedule::Constant(1e-2);
        cfg
    }

    #[test]
    fn alpha_sweep_rows_are_sorted_and_match_single_runs() {
        let mut cfg = base();
        cfg.grid = Some((GridParam::Alpha, vec![100.0, 50.0]));
        let table = run_pareto_sweep(&cfg).unwrap();
        assert_eq!(table.rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![50.0, 100.0]);
        for row in &table.rows {
            let mut single = base();
            single.hyper.alpha_pct = row.value;
            let rec = super::super::run::run_experiment(&single).unwrap();
            assert_eq!(row.final_loss.to_bits(), rec.summary.final_loss.to_bits());
            assert_eq!(row.distance.to_bits(), rec.summary.final_distance.to_bits());
        }
    }

    #[test]
    fn lambda_sweep_needs_a_regularizer() {
        let mut cfg = base();
        cfg.grid = Some((GridParam::Lambda, vec![0.0, 0.1]));
        assert!(matches!(run_pareto_sweep(&cfg), Err(MofoError::Config(_))));
        cfg.reg_kind = RegKind::L2;
        let table = run_pareto_sweep(&cfg).unwrap();
        assert_eq!(table.rows.len(), 2);
        // A stronger pull toward θ0 cannot increase the final distance here.
        assert!(table.rows[1].distance <= table.rows[0].distance);
    }

    #[test]
    fn duplicate_and_invalid_grids_are_rejected() {
        let mut cfg = base();
        cfg.grid = Some((GridParam::Alpha, vec![10.0, 10.0]));
        assert!(run_pareto_sweep(&cfg).is_err());
        cfg.grid = Some((GridParam::Alpha, vec![0.0, 10.0]));
        assert!(run_pareto_sweep(&cfg).is_err());
        cfg.grid = Some((GridParam::Alpha, vec![10.0]));
        cfg.optimizer = OptimizerKind::Adam;
        assert!(run_pareto_sweep(&cfg).is_err());
    }

    /// Finite only while the second coordinate stays at zero.
    struct Fragile {
        layout: std::sync::Arc<crate::partition::BlockLayout>,
        theta0: crate::partition::PartitionedVector,
    }

    impl Problem for Fragile {
        fn name(&self) -> &str {
            "fragile"
        }
        fn layout(&self) -> &std::sync::Arc<crate::partition::BlockLayout> {
            &self.layout
        }
        fn theta0(&self) -> &crate::partition::PartitionedVector {
            &self.theta0
        }
        fn loss(&self, theta: &crate::partition::PartitionedVector) -> Result<f64> {
            Ok(if theta.as_slice()[1] == 0.0 { 1.0 } else { f64::NAN })
        }
        fn grad(&self, theta: &crate::partition::PartitionedVector) -> Result<crate::partition::PartitionedVector> {
            crate::partition::PartitionedVector::filled(theta.layout().clone(), 1.0)
        }
        fn aux_loss(&self, _: &crate::partition::PartitionedVector) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn failed_cells_are_recorded() {
        let layout = crate::partition::BlockLayout::shared([("x", 2)]).unwrap();
        let problem = Fragile {
            theta0: crate::partition::PartitionedVector::zeros(layout.clone()),
            layout,
        };
        let mut cfg = base();
        cfg.steps = 5;
        // At 50% the tie resolves to the first coordinate only.
        cfg.grid = Some((GridParam::Alpha, vec![100.0, 50.0]));
        let table = run_pareto_sweep_on(&problem, &cfg).unwrap();
        assert!(table.rows[0].error.is_none());
        let failed = table.rows[1].error.as_deref().unwrap();
        assert!(failed.contains("step 2"), "{failed}");
        assert!(table.rows[1].final_loss.is_nan());
    }

    #[test]
    fn csv_round_trip() {
        let table = SweepTable {
            param: GridParam::Lambda,
            rows: vec![
                SweepRow { value: 0.0, final_loss: 0.25, final_aux_loss: 1.0, distance: 0.5, error: None },
                SweepRow {
                    value: 0.5,
                    final_loss: f64::NAN,
                    final_aux_loss: f64::NAN,
                    distance: f64::NAN,
                    error: Some("numeric failure at step 3".into()),
                },
            ],
        };
        let csv = table.to_csv();
        assert!(csv.starts_with("lambda,final_loss,final_aux_loss,distance,status\n"));
        let back = SweepTable::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        assert_eq!(back.ok_rows().count(), 1);
    }
}
