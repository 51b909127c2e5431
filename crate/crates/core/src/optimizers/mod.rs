//! Adam, MoFO, Lion, MoFO+Lion and the block-coordinate ablation family.
//!
//! All optimizers share [`OptimizerState`] and [`HyperParams`] and return a
//! [`StepReport`] with the quantities needed to audit the per-step update
//! bound. The free functions take the state by `&mut` but leave it untouched
//! when they return an error.

mod adam;
mod lion;

pub use adam::{adam_step, mofo_step, variant_step, VariantKind};
pub use lion::{lion_step, mofo_lion_step};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{MofoError, Result};
use crate::filter::validate_alpha;
use crate::partition::{BlockLayout, PartitionedVector};
use crate::rng::{self, RunRng};

/// Learning-rate schedule indexed by the 1-based step counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// `η / sqrt(t)`
    InverseSqrt(f64),
}

impl LrSchedule {
    pub fn rate(&self, t: u64) -> f64 {
        match *self {
            LrSchedule::Constant(eta) => eta,
            LrSchedule::InverseSqrt(eta) => eta / (t.max(1) as f64).sqrt(),
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant(eta) | LrSchedule::InverseSqrt(eta) => eta,
        }
    }

    pub fn is_inverse_sqrt(&self) -> bool {
        matches!(self, LrSchedule::InverseSqrt(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub beta1: f64,
    pub beta2: f64,
    /// Added to `sqrt(v_hat)` in the Adam-family denominator.
    pub epsilon: f64,
    /// Update fraction in percent, `(0, 100]`.
    pub alpha_pct: f64,
    pub lion_beta1: f64,
    pub lion_beta2: f64,
    pub lion_weight_decay: f64,
    pub lr: LrSchedule,
    /// Guard inside the `m/sqrt(v)` and `g/sqrt(v)` ranking scores only.
    pub ratio_epsilon: f64,
    /// Require `epsilon = 0` and `0 < beta1 < sqrt(beta2) < 1`.
    pub theory_mode: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            alpha_pct: 10.0,
            lion_beta1: 0.9,
            lion_beta2: 0.99,
            lion_weight_decay: 0.0,
            lr: LrSchedule::Constant(1e-3),
            ratio_epsilon: 1e-12,
            theory_mode: false,
        }
    }
}

impl HyperParams {
    /// Theory-mode preset: `epsilon = 0`, `η_t = η / sqrt(t)`.
    pub fn theory(eta: f64, alpha_pct: f64) -> Self {
        Self {
            epsilon: 0.0,
            alpha_pct,
            lr: LrSchedule::InverseSqrt(eta),
            theory_mode: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..1.0).contains(&x) {
                Ok(())
            } else {
                Err(MofoError::InvalidHyperParams(format!("{name} = {x} not in [0, 1)")))
            }
        };
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        unit("lion_beta1", self.lion_beta1)?;
        unit("lion_beta2", self.lion_beta2)?;
        validate_alpha(self.alpha_pct)?;
        for (name, x) in [
            ("epsilon", self.epsilon),
            ("lion_weight_decay", self.lion_weight_decay),
            ("ratio_epsilon", self.ratio_epsilon),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(MofoError::InvalidHyperParams(format!("{name} = {x} must be >= 0")));
            }
        }
        let eta = self.lr.base();
        if !(eta.is_finite() && eta > 0.0) {
            return Err(MofoError::InvalidHyperParams(format!("learning rate {eta} must be > 0")));
        }
        if self.theory_mode && !self.satisfies_theory_conditions() {
            return Err(MofoError::InvalidHyperParams(
                "theory mode requires epsilon = 0 and 0 < beta1 < sqrt(beta2) < 1".into(),
            ));
        }
        Ok(())
    }

    pub fn satisfies_theory_conditions(&self) -> bool {
        self.epsilon == 0.0 && self.beta1 > 0.0 && self.beta1 < self.beta2.sqrt() && self.beta2 < 1.0
    }

    /// `1 / (sqrt(1 - β2) (1 - β1 / sqrt(β2)))`, the per-coordinate step
    /// cap in units of `η_t`. Infinite when `β1 >= sqrt(β2)`.
    pub fn update_cap_coefficient(&self) -> f64 {
        let ratio = self.beta1 / self.beta2.sqrt();
        if ratio >= 1.0 {
            return f64::INFINITY;
        }
        1.0 / ((1.0 - self.beta2).sqrt() * (1.0 - ratio))
    }

    /// `sqrt(d α% + B) · coefficient`, the cap on `||θ_t − θ_{t−1}||_2 / η_t`.
    pub fn update_norm_constant(&self, layout: &BlockLayout) -> f64 {
        let selected = layout.dim() as f64 * self.alpha_pct / 100.0 + layout.num_blocks() as f64;
        selected.sqrt() * self.update_cap_coefficient()
    }
}

/// Moments and step counter carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Adam first moment.
    pub m: PartitionedVector,
    /// Adam second moment.
    pub v: PartitionedVector,
    /// Lion momentum (`m_{t-1}` at the start of a step).
    pub prev_m: PartitionedVector,
    /// Number of completed steps.
    pub t: u64,
}

impl OptimizerState {
    pub fn new(layout: Arc<BlockLayout>) -> Self {
        Self {
            m: PartitionedVector::zeros(layout.clone()),
            v: PartitionedVector::zeros(layout.clone()),
            prev_m: PartitionedVector::zeros(layout),
            t: 0,
        }
    }

    pub(crate) fn check_compatible(
        &self,
        theta: &PartitionedVector,
        grad: &PartitionedVector,
    ) -> Result<()> {
        theta.ensure_same_layout(grad)?;
        theta.ensure_same_layout(&self.m)?;
        grad.check_finite()?;
        theta.check_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Step index `t` this report belongs to (1-based).
    pub t: u64,
    /// Learning rate `η_t` used.
    pub lr: f64,
    /// Number of coordinates allowed to take the optimizer update, per block.
    pub mask_counts: Vec<usize>,
    /// Largest `|Δθ_i|` over selected coordinates.
    pub max_abs_update: f64,
    /// Largest `|Δθ_i|` over coordinates outside the mask.
    pub max_abs_frozen_update: f64,
    /// `||θ_t − θ_{t−1}||_2`.
    pub update_l2: f64,
    /// Per-coordinate cap `η_t / (sqrt(1−β2)(1−β1/sqrt(β2)))`; infinite for
    /// rules the cap does not apply to.
    pub lemma_bound: f64,
    pub bound_violated: bool,
}

impl StepReport {
    pub fn mask_count_total(&self) -> usize {
        self.mask_counts.iter().sum()
    }
}

/// Relative slack for comparisons against the update caps.
const BOUND_RTOL: f64 = 1e-9;

/// Audits one step against the per-coordinate and ℓ2 update caps.
///
/// Fails with [`MofoError::NotTheoryMode`] unless `epsilon = 0` and
/// `0 < β1 < sqrt(β2) < 1`.
pub fn check_lemma_bound(
    report: &StepReport,
    h: &HyperParams,
    layout: &BlockLayout,
    t: u64,
) -> Result<bool> {
    if !h.satisfies_theory_conditions() {
        return Err(MofoError::NotTheoryMode);
    }
    let eta_t = h.lr.rate(t);
    let cap = h.update_cap_coefficient() * eta_t;
    let norm_cap = h.update_norm_constant(layout) * eta_t;
    Ok(report.max_abs_frozen_update == 0.0
        && report.max_abs_update <= cap * (1.0 + BOUND_RTOL)
        && report.update_l2 <= norm_cap * (1.0 + BOUND_RTOL))
}

/// Optimizer selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    Mofo,
    Lion,
    MofoLion,
    Variant(VariantKind),
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 9] = [
        OptimizerKind::Adam,
        OptimizerKind::Mofo,
        OptimizerKind::Lion,
        OptimizerKind::MofoLion,
        OptimizerKind::Variant(VariantKind::RandomBcd),
        OptimizerKind::Variant(VariantKind::GradFiltered),
        OptimizerKind::Variant(VariantKind::MvFiltered),
        OptimizerKind::Variant(VariantKind::GvFiltered),
        OptimizerKind::Variant(VariantKind::BlockFreezeHalf),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Mofo => "mofo",
            OptimizerKind::Lion => "lion",
            OptimizerKind::MofoLion => "mofo-lion",
            OptimizerKind::Variant(VariantKind::RandomBcd) => "random-bcd",
            OptimizerKind::Variant(VariantKind::GradFiltered) => "grad-bcd",
            OptimizerKind::Variant(VariantKind::MvFiltered) => "mv-bcd",
            OptimizerKind::Variant(VariantKind::GvFiltered) => "gv-bcd",
            OptimizerKind::Variant(VariantKind::BlockFreezeHalf) => "hft",
        }
    }

    /// Whether the update mask is the top-α% filter of some vector.
    pub fn uses_alpha_filter(&self) -> bool {
        !matches!(
            self,
            OptimizerKind::Adam
                | OptimizerKind::Lion
                | OptimizerKind::Variant(VariantKind::BlockFreezeHalf)
        )
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = MofoError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| MofoError::Config(format!("unknown optimizer `{s}`")))
    }
}

/// Stateful driver bundling a kind, its hyperparameters, state and PRNG.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    hyper: HyperParams,
    state: OptimizerState,
    rng: RunRng,
}

impl Optimizer {
    pub fn new(
        kind: OptimizerKind,
        hyper: HyperParams,
        layout: Arc<BlockLayout>,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            kind,
            hyper,
            state: OptimizerState::new(layout),
            rng: rng::seeded(seed, rng::streams::OPTIMIZER),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step(
        &mut self,
        theta: &PartitionedVector,
        grad: &PartitionedVector,
    ) -> Result<(PartitionedVector, StepReport)> {
        let (h, s) = (&self.hyper, &mut self.state);
        match self.kind {
            OptimizerKind::Adam => adam_step(theta, grad, s, h),
            OptimizerKind::Mofo => mofo_step(theta, grad, s, h),
            OptimizerKind::Lion => lion_step(theta, grad, s, h),
            OptimizerKind::MofoLion => mofo_lion_step(theta, grad, s, h),
            OptimizerKind::Variant(kind) => variant_step(kind, theta, grad, s, h, Some(&mut self.rng)),
        }
    }
}

/// `sign` with `sign(0) = 0`.
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(LrSchedule::Constant(0.1).rate(9), 0.1);
        assert!((LrSchedule::InverseSqrt(0.3).rate(9) - 0.1).abs() < 1e-16);
        assert_eq!(LrSchedule::InverseSqrt(0.3).rate(1), 0.3);
    }

    #[test]
    fn cap_coefficient_matches_closed_form() {
        let h = HyperParams::default();
        // Evaluated independently: sqrt(0.001) = 0.0316227766..., 0.9/sqrt(0.999) = 0.9004503...
        let expected = 1.0 / (0.001f64.sqrt() * (1.0 - 0.9 / 0.999f64.sqrt()));
        assert!((h.update_cap_coefficient() - expected).abs() < 1e-9);
        assert!((h.update_cap_coefficient() - 317.66).abs() < 0.05);
    }

    #[test]
    fn norm_constant_full_fraction() {
        let h = HyperParams { alpha_pct: 100.0, ..HyperParams::default() };
        let layout = BlockLayout::single("x", 10).unwrap();
        let c = h.update_norm_constant(&layout);
        assert!((c - 11f64.sqrt() * h.update_cap_coefficient()).abs() < 1e-9);
    }

    #[test]
    fn theory_mode_validation() {
        assert!(HyperParams::theory(0.1, 10.0).validate().is_ok());
        let bad_eps = HyperParams { epsilon: 1e-8, ..HyperParams::theory(0.1, 10.0) };
        assert!(bad_eps.validate().is_err());
        let bad_beta = HyperParams { beta1: 0.99, beta2: 0.9, ..HyperParams::theory(0.1, 10.0) };
        assert!(bad_beta.validate().is_err());
        assert!(HyperParams { beta1: 1.0, ..HyperParams::default() }.validate().is_err());
        assert!(HyperParams { alpha_pct: 0.0, ..HyperParams::default() }.validate().is_err());
        assert!(HyperParams { lr: LrSchedule::Constant(0.0), ..HyperParams::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn lemma_check_requires_theory_conditions() {
        let layout = BlockLayout::single("x", 2).unwrap();
        let report = StepReport {
            t: 1,
            lr: 0.1,
            mask_counts: vec![1],
            max_abs_update: 0.1,
            max_abs_frozen_update: 0.0,
            update_l2: 0.1,
            lemma_bound: f64::INFINITY,
            bound_violated: false,
        };
        assert_eq!(
            check_lemma_bound(&report, &HyperParams::default(), &layout, 1),
            Err(MofoError::NotTheoryMode)
        );
        let h = HyperParams::theory(0.1, 50.0);
        assert_eq!(check_lemma_bound(&report, &h, &layout, 1), Ok(true));
        let moved_frozen = StepReport { max_abs_frozen_update: 1e-300, ..report.clone() };
        assert_eq!(check_lemma_bound(&moved_frozen, &h, &layout, 1), Ok(false));
        let too_big = StepReport { max_abs_update: 40.0, update_l2: 40.0, ..report };
        assert_eq!(check_lemma_bound(&too_big, &h, &layout, 1), Ok(false));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
        }
        assert_eq!("MoFO".parse::<OptimizerKind>().unwrap(), OptimizerKind::Mofo);
        assert!("sgd".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(-2.0), -1.0);
    }
}
