//! The top-α% filter and the norm it induces.
//!
//! Within each block the filter keeps the `ceil(d_k * α / 100)` entries of
//! largest magnitude. Equal magnitudes are ordered by ascending index so the
//! selection is a pure function of the input bits.

use std::cmp::Ordering;
use std::sync::Arc;

use crate::error::{MofoError, Result};
use crate::partition::{same_layout, BlockLayout, PartitionedVector};

/// Relative slack used when `d_k * α / 100` lands within rounding error of an
/// integer, so that e.g. `α = 100 / 3` on a 3-entry block selects exactly one.
const CEIL_SNAP: f64 = 1e-9;

pub fn validate_alpha(alpha_pct: f64) -> Result<()> {
    if alpha_pct.is_finite() && alpha_pct > 0.0 && alpha_pct <= 100.0 {
        Ok(())
    } else {
        Err(MofoError::AlphaOutOfRange(alpha_pct))
    }
}

/// Number of entries selected in a block of `block_len` entries.
pub fn selection_count(block_len: usize, alpha_pct: f64) -> Result<usize> {
    validate_alpha(alpha_pct)?;
    let exact = block_len as f64 * alpha_pct / 100.0;
    let nearest = exact.round();
    let count = if (exact - nearest).abs() <= CEIL_SNAP * nearest.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    Ok((count as usize).clamp(1, block_len))
}

/// Per-coordinate 0/1 selection over a layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterMask {
    layout: Arc<BlockLayout>,
    bits: Vec<bool>,
}

impl FilterMask {
    pub fn from_bits(layout: Arc<BlockLayout>, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != layout.dim() {
            return Err(MofoError::LengthMismatch {
                expected: layout.dim(),
                actual: bits.len(),
            });
        }
        Ok(Self { layout, bits })
    }

    pub fn ones(layout: Arc<BlockLayout>) -> Self {
        let bits = vec![true; layout.dim()];
        Self { layout, bits }
    }

    pub fn zeros(layout: Arc<BlockLayout>) -> Self {
        let bits = vec![false; layout.dim()];
        Self { layout, bits }
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn counts_per_block(&self) -> Vec<usize> {
        self.layout
            .blocks()
            .map(|(_, r)| self.bits[r].iter().filter(|&&b| b).count())
            .collect()
    }

    pub fn total_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Orders indices by magnitude descending, then index ascending.
fn by_magnitude_then_index(values: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| {
        values[j]
            .abs()
            .total_cmp(&values[i].abs())
            .then_with(|| i.cmp(&j))
    }
}

/// Writes the top-α% selection of `values` (one block) into `bits`.
pub(crate) fn select_block(values: &[f64], alpha_pct: f64, bits: &mut [bool]) -> Result<()> {
    let keep = selection_count(values.len(), alpha_pct)?;
    bits.iter_mut().for_each(|b| *b = false);
    if keep == values.len() {
        bits.iter_mut().for_each(|b| *b = true);
        return Ok(());
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    let cmp = by_magnitude_then_index(values);
    order.select_nth_unstable_by(keep - 1, &cmp);
    for &i in &order[..keep] {
        bits[i] = true;
    }
    Ok(())
}

/// Top-α% mask of a flat slice under `layout`. Used directly for derived
/// ranking scores (ratios) that are not themselves partitioned vectors.
pub fn top_alpha_mask_of(
    layout: &Arc<BlockLayout>,
    values: &[f64],
    alpha_pct: f64,
) -> Result<FilterMask> {
    validate_alpha(alpha_pct)?;
    if values.len() != layout.dim() {
        return Err(MofoError::LengthMismatch {
            expected: layout.dim(),
            actual: values.len(),
        });
    }
    if let Some(index) = values.iter().position(|x| x.is_nan()) {
        return Err(MofoError::NonFinite {
            index,
            value: values[index],
        });
    }
    let mut bits = vec![false; values.len()];
    for (_, r) in layout.blocks() {
        select_block(&values[r.clone()], alpha_pct, &mut bits[r])?;
    }
    Ok(FilterMask {
        layout: layout.clone(),
        bits,
    })
}

pub fn top_alpha_mask(v: &PartitionedVector, alpha_pct: f64) -> Result<FilterMask> {
    top_alpha_mask_of(v.layout(), v.as_slice(), alpha_pct)
}

/// Sum of the magnitudes kept by the top-α% filter of `v` itself.
pub fn top_alpha_norm(v: &PartitionedVector, alpha_pct: f64) -> Result<f64> {
    let mask = top_alpha_mask(v, alpha_pct)?;
    Ok(masked_l1(v, &mask))
}

/// `||v ⊙ mask||_1` without materialising the product.
pub fn masked_l1(v: &PartitionedVector, mask: &FilterMask) -> f64 {
    v.as_slice()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .map(|(x, _)| x.abs())
        .sum()
}

pub fn apply_mask(v: &PartitionedVector, mask: &FilterMask) -> Result<PartitionedVector> {
    if !same_layout(v.layout(), mask.layout()) {
        return Err(MofoError::LayoutMismatch);
    }
    let values = v
        .as_slice()
        .iter()
        .zip(mask.bits())
        .map(|(&x, &b)| if b { x } else { 0.0 })
        .collect();
    v.with_values(values)
}
