//! Forgetting and convergence diagnostics over trajectories.

use crate::error::{MofoError, Result};
use crate::partition::PartitionedVector;

/// One optimizer step as recorded by the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub t: u64,
    pub lr: f64,
    /// Fine-tuning loss at `θ_{t-1}`, the point the gradient was taken at.
    pub loss: f64,
    /// Pre-training / task-A loss at `θ_t`.
    pub aux_loss: f64,
    /// `||g_t||_∞`
    pub grad_inf: f64,
    /// `D(θ_t, θ0)`
    pub distance: f64,
    pub mask_counts: Vec<usize>,
}

impl StepRow {
    pub fn mask_count_total(&self) -> usize {
        self.mask_counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub min_grad_inf: f64,
    pub final_loss: f64,
    pub final_aux_loss: f64,
    pub final_distance: f64,
    pub significant_change_fraction: f64,
}

/// Per-step trace plus end-of-run summary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<StepRow>,
    pub summary: RunSummary,
    pub final_theta: PartitionedVector,
    /// True when the trace used `η_t = η / sqrt(t)`.
    pub inverse_sqrt_lr: bool,
    /// Number of steps whose update-bound check failed (theory mode only).
    pub lemma_violations: u64,
}

/// Mean over blocks of `||θ^(k) − θ0^(k)||_2 / ||θ0^(k)||_2`. Blocks whose
/// reference norm is zero contribute the absolute change instead.
pub fn block_distance(theta: &PartitionedVector, theta0: &PartitionedVector) -> Result<f64> {
    theta.ensure_same_layout(theta0)?;
    let layout = theta.layout();
    let mut total = 0.0;
    for (_, r) in layout.blocks() {
        let cur = &theta.as_slice()[r.clone()];
        let base = &theta0.as_slice()[r];
        let diff = cur
            .iter()
            .zip(base)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let denom = base.iter().map(|b| b * b).sum::<f64>().sqrt();
        total += if denom > 0.0 { diff / denom } else { diff };
    }
    Ok(total / layout.num_blocks() as f64)
}

/// Fraction of coordinates with `|θ_i − θ0_i| > threshold` (strict).
pub fn significant_change_fraction(
    theta: &PartitionedVector,
    theta0: &PartitionedVector,
    threshold: f64,
) -> Result<f64> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(MofoError::InvalidArgument(format!(
            "threshold {threshold} must be > 0"
        )));
    }
    theta.ensure_same_layout(theta0)?;
    let moved = theta
        .as_slice()
        .iter()
        .zip(theta0.as_slice())
        .filter(|(a, b)| (*a - *b).abs() > threshold)
        .count();
    Ok(moved as f64 / theta.len() as f64)
}

/// Threshold used for the stability metric.
pub const SIGNIFICANT_CHANGE_THRESHOLD: f64 = 2e-6;

/// Minimum number of steps for a rate fit.
pub const MIN_ENVELOPE_STEPS: usize = 100;

/// Slope at or below which the envelope is called consistent with a
/// `1/sqrt(T)` rate up to log factors.
pub const RATE_SLOPE_THRESHOLD: f64 = -0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    /// `(T, min_{t<=T} ||g_t||_∞)` for every `T`.
    pub curve: Vec<(u64, f64)>,
    /// Least-squares slope of `log(min-grad)` against `log(T)` over the last
    /// decade of `T`. `None` when the record's schedule is not `η/sqrt(t)`.
    pub slope: Option<f64>,
}

impl Envelope {
    pub fn consistent_with_rate(&self) -> Option<bool> {
        self.slope.map(|s| s <= RATE_SLOPE_THRESHOLD)
    }
}

/// Running minimum of a gradient-norm sequence indexed from `t = 1`.
pub fn running_min(grad_inf: &[f64]) -> Vec<(u64, f64)> {
    let mut best = f64::INFINITY;
    grad_inf
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            best = best.min(g);
            (i as u64 + 1, best)
        })
        .collect()
}

/// Least-squares slope of `log y` on `log T` for `T` in `[T_max/10, T_max]`.
/// A window containing an exact zero (a stationary point was reached) has
/// slope `-inf`.
pub fn log_log_slope(curve: &[(u64, f64)]) -> Result<f64> {
    let t_max = curve.last().map(|c| c.0).unwrap_or(0);
    let lo = (t_max / 10).max(1);
    let window: Vec<(u64, f64)> = curve.iter().copied().filter(|(t, _)| *t >= lo).collect();
    if window.len() < 2 {
        return Err(MofoError::InvalidArgument("need at least two points to fit a slope".into()));
    }
    if window.iter().any(|(_, y)| *y == 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let pts: Vec<(f64, f64)> = window
        .iter()
        .map(|&(t, y)| ((t as f64).ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

pub fn convergence_envelope(record: &RunRecord) -> Result<Envelope> {
    let grads: Vec<f64> = record.rows.iter().map(|r| r.grad_inf).collect();
    envelope_from(&grads, record.inverse_sqrt_lr)
}

/// Envelope of a raw `||g_t||_∞` sequence.
pub fn envelope_from(grad_inf: &[f64], inverse_sqrt_lr: bool) -> Result<Envelope> {
    if grad_inf.len() < MIN_ENVELOPE_STEPS {
        return Err(MofoError::InvalidArgument(format!(
            "envelope needs at least {MIN_ENVELOPE_STEPS} steps, got {}",
            grad_inf.len()
        )));
    }
    let curve = running_min(grad_inf);
    let slope = if inverse_sqrt_lr {
        Some(log_log_slope(&curve)?)
    } else {
        None
    };
    Ok(Envelope { curve, slope })
}
