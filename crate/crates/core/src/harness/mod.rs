//! Experiment harness: configuration, runs, sweeps and plots.

pub mod config;
pub mod run;
pub mod plot;
pub mod sweep;
pub mod verify;

pub use config::{ExperimentConfig, GridParam, ProblemConfig};
pub use run::{run_experiment, run_on, trace_csv, write_trace_csv, RunFailure, CSV_HEADER};
pub use plot::{emit_plot, render_svg, PlotData, PlotKind};
pub use sweep::{run_pareto_sweep, run_pareto_sweep_on, SweepRow, SweepTable};

use crate::error::MofoError;

/// Process exit status for a failed command: 1 for bad configuration or
/// input, 2 for numeric failure during a run.
pub fn exit_code(err: &MofoError) -> u8 {
    match err {
        MofoError::Numeric { .. } | MofoError::NonFinite { .. } | MofoError::ZeroSecondMoment(_) => 2,
        _ => 1,
    }
}
