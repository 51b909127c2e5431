use rand::seq::index;

use super::{HyperParams, OptimizerState, StepReport};
use crate::error::{MofoError, Result};
use crate::filter::{selection_count, top_alpha_mask_of, FilterMask};
use crate::partition::PartitionedVector;
use crate::rng::RunRng;

/// Block-coordinate variants that keep Adam's moment updates but pick the
/// updated coordinates by a different rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantKind {
    /// Uniformly random `ceil(d_k α%)` entries per block.
    RandomBcd,
    /// Top-α% of `g_t`.
    GradFiltered,
    /// Top-α% of `m_t / (sqrt(v_t) + ε_div)`.
    MvFiltered,
    /// Top-α% of `g_t / (sqrt(v_t) + ε_div)`.
    GvFiltered,
    /// A uniformly random `ceil(B/2)` of the blocks, updated in full.
    BlockFreezeHalf,
}

enum MaskRule<'a> {
    All,
    Momentum,
    Variant(VariantKind, Option<&'a mut RunRng>),
}

/// Plain Adam with bias correction.
pub fn adam_step(
    theta: &PartitionedVector,
    grad: &PartitionedVector,
    state: &mut OptimizerState,
    h: &HyperParams,
) -> Result<(PartitionedVector, StepReport)> {
    adam_family_step(theta, grad, state, h, MaskRule::All)
}

/// Adam moments everywhere, parameter update only on the top-α% of `|m_t|`.
pub fn mofo_step(
    theta: &PartitionedVector,
    grad: &PartitionedVector,
    state: &mut OptimizerState,
    h: &HyperParams,
) -> Result<(PartitionedVector, StepReport)> {
    adam_family_step(theta, grad, state, h, MaskRule::Momentum)
}

pub fn variant_step(
    kind: VariantKind,
    theta: &PartitionedVector,
    grad: &PartitionedVector,
    state: &mut OptimizerState,
    h: &HyperParams,
    rng: Option<&mut RunRng>,
) -> Result<(PartitionedVector, StepReport)> {
    if matches!(kind, VariantKind::RandomBcd | VariantKind::BlockFreezeHalf) && rng.is_none() {
        return Err(MofoError::MissingRng);
    }
    adam_family_step(theta, grad, state, h, MaskRule::Variant(kind, rng))
}

fn adam_family_step(
    theta: &PartitionedVector,
    grad: &PartitionedVector,
    state: &mut OptimizerState,
    h: &HyperParams,
    rule: MaskRule<'_>,
) -> Result<(PartitionedVector, StepReport)> {
    h.validate()?;
    state.check_compatible(theta, grad)?;
    let layout = theta.layout().clone();
    let t = state.t + 1;
    let (b1, b2) = (h.beta1, h.beta2);

    let g = grad.as_slice();
    let m: Vec<f64> = state
        .m
        .as_slice()
        .iter()
        .zip(g)
        .map(|(&m, &g)| b1 * m + (1.0 - b1) * g)
        .collect();
    let v: Vec<f64> = state
        .v
        .as_slice()
        .iter()
        .zip(g)
        .map(|(&v, &g)| b2 * v + (1.0 - b2) * g * g)
        .collect();

    let mask = match rule {
        MaskRule::All => FilterMask::ones(layout.clone()),
        MaskRule::Momentum => top_alpha_mask_of(&layout, &m, h.alpha_pct)?,
        MaskRule::Variant(kind, rng) => variant_mask(kind, &layout, g, &m, &v, h, rng)?,
    };

    let t_exp = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = 1.0 - b1.powi(t_exp);
    let bc2 = 1.0 - b2.powi(t_exp);
    let lr = h.lr.rate(t);

    let mut next = theta.as_slice().to_vec();
    for (i, slot) in next.iter_mut().enumerate() {
        if !mask.is_set(i) {
            continue;
        }
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let denom = v_hat.sqrt() + h.epsilon;
        if denom == 0.0 {
            if m_hat == 0.0 {
                continue;
            }
            return Err(MofoError::ZeroSecondMoment(i));
        }
        *slot -= lr * m_hat / denom;
    }
    if let Some(i) = next.iter().position(|x| !x.is_finite()) {
        return Err(MofoError::Numeric {
            step: t,
            reason: format!("parameter {i} became non-finite"),
        });
    }

    let next = theta.with_values(next)?;
    let report = build_report(t, lr, theta, &next, &mask, h.update_cap_coefficient() * lr);
    state.m = state.m.with_values(m)?;
    state.v = state.v.with_values(v)?;
    state.t = t;
    Ok((next, report))
}

fn variant_mask(
    kind: VariantKind,
    layout: &std::sync::Arc<crate::partition::BlockLayout>,
    g: &[f64],
    m: &[f64],
    v: &[f64],
    h: &HyperParams,
    rng: Option<&mut RunRng>,
) -> Result<FilterMask> {
    let over_rms = |num: &[f64]| -> Vec<f64> {
        num.iter()
            .zip(v)
            .map(|(&n, &v)| n / (v.sqrt() + h.ratio_epsilon))
            .collect()
    };
    match kind {
        VariantKind::GradFiltered => top_alpha_mask_of(layout, g, h.alpha_pct),
        VariantKind::MvFiltered => top_alpha_mask_of(layout, &over_rms(m), h.alpha_pct),
        VariantKind::GvFiltered => top_alpha_mask_of(layout, &over_rms(g), h.alpha_pct),
        VariantKind::RandomBcd => {
            let rng = rng.ok_or(MofoError::MissingRng)?;
            let mut bits = vec![false; layout.dim()];
            for (_, r) in layout.blocks() {
                let keep = selection_count(r.len(), h.alpha_pct)?;
                for i in index::sample(rng, r.len(), keep) {
                    bits[r.start + i] = true;
                }
            }
            FilterMask::from_bits(layout.clone(), bits)
        }
        VariantKind::BlockFreezeHalf => {
            let rng = rng.ok_or(MofoError::MissingRng)?;
            let blocks = layout.num_blocks();
            let mut bits = vec![false; layout.dim()];
            for k in index::sample(rng, blocks, blocks.div_ceil(2)) {
                bits[layout.range(k)?].iter_mut().for_each(|b| *b = true);
            }
            FilterMask::from_bits(layout.clone(), bits)
        }
    }
}

pub(super) fn build_report(
    t: u64,
    lr: f64,
    before: &PartitionedVector,
    after: &PartitionedVector,
    mask: &FilterMask,
    lemma_bound: f64,
) -> StepReport {
    let mut max_sel = 0.0f64;
    let mut max_frozen = 0.0f64;
    let mut sq = 0.0;
    for (i, (a, b)) in before.as_slice().iter().zip(after.as_slice()).enumerate() {
        let d = (b - a).abs();
        sq += d * d;
        if mask.is_set(i) {
            max_sel = max_sel.max(d);
        } else {
            max_frozen = max_frozen.max(d);
        }
    }
    let update_l2 = sq.sqrt();
    let count = mask.total_count() as f64;
    let slack = 1.0 + super::BOUND_RTOL;
    let bound_violated = max_frozen > 0.0
        || max_sel > lemma_bound * slack
        || update_l2 > lemma_bound * count.sqrt() * slack;
    StepReport {
        t,
        lr,
        mask_counts: mask.counts_per_block(),
        max_abs_update: max_sel,
        max_abs_frozen_update: max_frozen,
        update_l2,
        lemma_bound,
        bound_violated,
    }
}
