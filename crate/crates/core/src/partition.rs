//! Partitioned flat vectors.
//!
//! Parameters, gradients and optimizer moments all share one storage layout:
//! a flat `Vec<f64>` cut into named, contiguous blocks. Every filter in the
//! crate operates block by block, so the layout is carried alongside the data.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{MofoError, Result};

/// Ordered list of named contiguous blocks covering `0..dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    names: Vec<String>,
    lengths: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
}

impl BlockLayout {
    pub fn new<S, I>(blocks: I) -> Result<Self>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, usize)>,
    {
        let mut names: Vec<String> = Vec::new();
        let mut lengths = Vec::new();
        let mut offsets = Vec::new();
        let mut dim = 0usize;
        for (name, len) in blocks {
            let name = name.into();
            if len == 0 {
                return Err(MofoError::ZeroLengthBlock(name));
            }
            if names.contains(&name) {
                return Err(MofoError::DuplicateBlockName(name));
            }
            offsets.push(dim);
            dim += len;
            names.push(name);
            lengths.push(len);
        }
        if names.is_empty() {
            return Err(MofoError::EmptyLayout);
        }
        Ok(Self {
            names,
            lengths,
            offsets,
            dim,
        })
    }

    /// Layout with a single block spanning the whole vector.
    pub fn single(name: &str, len: usize) -> Result<Self> {
        Self::new([(name, len)])
    }

    /// Convenience constructor returning a shared handle.
    pub fn shared<S, I>(blocks: I) -> Result<Arc<Self>>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, usize)>,
    {
        Self::new(blocks).map(Arc::new)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.names.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn name(&self, k: usize) -> Result<&str> {
        self.check_index(k)?;
        Ok(&self.names[k])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Flat index range of block `k`.
    pub fn range(&self, k: usize) -> Result<Range<usize>> {
        self.check_index(k)?;
        Ok(self.offsets[k]..self.offsets[k] + self.lengths[k])
    }

    /// Iterator over `(name, flat range)` for every block in order.
    pub fn blocks(&self) -> impl Iterator<Item = (&str, Range<usize>)> + '_ {
        self.names
            .iter()
            .zip(self.offsets.iter().zip(&self.lengths))
            .map(|(n, (&o, &l))| (n.as_str(), o..o + l))
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.names.len() {
            return Err(MofoError::BlockIndexOutOfRange {
                index: k,
                blocks: self.names.len(),
            });
        }
        Ok(())
    }
}

/// Returns true when both handles describe the same block structure.
pub(crate) fn same_layout(a: &Arc<BlockLayout>, b: &Arc<BlockLayout>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// Finite `f64` values laid out according to a [`BlockLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedVector {
    layout: Arc<BlockLayout>,
    values: Vec<f64>,
}

impl PartitionedVector {
    /// Builds a vector, rejecting wrong lengths and NaN/Inf entries.
    pub fn new(layout: Arc<BlockLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(MofoError::LengthMismatch {
                expected: layout.dim(),
                actual: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<BlockLayout>) -> Self {
        let values = vec![0.0; layout.dim()];
        Self { layout, values }
    }

    pub fn filled(layout: Arc<BlockLayout>, value: f64) -> Result<Self> {
        let values = vec![value; layout.dim()];
        Self::new(layout, values)
    }

    /// Reassembles a vector from per-block slices given in layout order.
    pub fn concat(layout: Arc<BlockLayout>, blocks: &[&[f64]]) -> Result<Self> {
        if blocks.len() != layout.num_blocks() {
            return Err(MofoError::LengthMismatch {
                expected: layout.num_blocks(),
                actual: blocks.len(),
            });
        }
        let mut values = Vec::with_capacity(layout.dim());
        for (block, &len) in blocks.iter().zip(layout.lengths()) {
            if block.len() != len {
                return Err(MofoError::LengthMismatch {
                    expected: len,
                    actual: block.len(),
                });
            }
            values.extend_from_slice(block);
        }
        Self::new(layout, values)
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the flat storage. Callers that write non-finite
    /// values must call [`PartitionedVector::check_finite`] afterwards.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, k: usize) -> Result<&[f64]> {
        let r = self.layout.range(k)?;
        Ok(&self.values[r])
    }

    pub fn block_mut(&mut self, k: usize) -> Result<&mut [f64]> {
        let r = self.layout.range(k)?;
        Ok(&mut self.values[r])
    }

    /// Iterator over block slices in layout order.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.layout.blocks().map(move |(_, r)| &self.values[r])
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.values)
    }

    pub fn ensure_same_layout(&self, other: &PartitionedVector) -> Result<()> {
        if same_layout(&self.layout, &other.layout) {
            Ok(())
        } else {
            Err(MofoError::LayoutMismatch)
        }
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn sub(&self, other: &PartitionedVector) -> Result<Self> {
        self.ensure_same_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        self.with_values(values)
    }

    pub fn add(&self, other: &PartitionedVector) -> Result<Self> {
        self.ensure_same_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        self.with_values(values)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|x| c * x)
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|x| x.abs()).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(MofoError::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_block() -> Arc<BlockLayout> {
        BlockLayout::shared([("w1", 4), ("b1", 2)]).unwrap()
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let l = two_block();
        assert_eq!(l.dim(), 6);
        assert_eq!(l.num_blocks(), 2);
        assert_eq!(l.offsets(), &[0, 4]);
        assert_eq!(l.range(1).unwrap(), 4..6);
    }

    #[test]
    fn single_block_layout() {
        let l = BlockLayout::new([("x", 1)]).unwrap();
        assert_eq!((l.dim(), l.num_blocks()), (1, 1));
    }

    #[test]
    fn layout_errors() {
        assert_eq!(
            BlockLayout::new([("a", 2), ("a", 3)]),
            Err(MofoError::DuplicateBlockName("a".into()))
        );
        assert_eq!(
            BlockLayout::new([("a", 2), ("b", 0)]),
            Err(MofoError::ZeroLengthBlock("b".into()))
        );
        assert_eq!(
            BlockLayout::new(Vec::<(String, usize)>::new()),
            Err(MofoError::EmptyLayout)
        );
    }

    #[test]
    fn block_view_indexes() {
        let v = PartitionedVector::new(two_block(), (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(v.block(1).unwrap(), &[4.0, 5.0]);
        assert!(matches!(
            v.block(2),
            Err(MofoError::BlockIndexOutOfRange { index: 2, blocks: 2 })
        ));

        let single = BlockLayout::shared([("x", 3)]).unwrap();
        let s = PartitionedVector::new(single, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.block(0).unwrap(), s.as_slice());
    }

    #[test]
    fn rejects_non_finite_and_wrong_length() {
        let l = two_block();
        assert!(matches!(
            PartitionedVector::new(l.clone(), vec![0.0; 5]),
            Err(MofoError::LengthMismatch { expected: 6, actual: 5 })
        ));
        let mut vals = vec![0.0; 6];
        vals[3] = f64::NAN;
        assert!(matches!(
            PartitionedVector::new(l, vals),
            Err(MofoError::NonFinite { index: 3, .. })
        ));
    }

    #[test]
    fn layout_mismatch_detected() {
        let a = PartitionedVector::zeros(two_block());
        let b = PartitionedVector::zeros(BlockLayout::shared([("w1", 3), ("b1", 3)]).unwrap());
        assert_eq!(a.sub(&b), Err(MofoError::LayoutMismatch));
        // Structurally equal layouts behind different handles are compatible.
        let c = PartitionedVector::zeros(two_block());
        assert!(a.sub(&c).is_ok());
    }

    proptest! {
        #[test]
        fn block_writes_match_flat_writes(
            lens in prop::collection::vec(1usize..6, 1..5),
            seed_vals in prop::collection::vec(-1e3f64..1e3, 30),
        ) {
            let layout = BlockLayout::shared(
                lens.iter().enumerate().map(|(i, &l)| (format!("b{i}"), l)),
            ).unwrap();
            let d = layout.dim();
            let mut via_blocks = PartitionedVector::zeros(layout.clone());
            let mut via_flat = PartitionedVector::zeros(layout.clone());
            for k in 0..layout.num_blocks() {
                let r = layout.range(k).unwrap();
                for (j, slot) in via_blocks.block_mut(k).unwrap().iter_mut().enumerate() {
                    *slot = seed_vals[(r.start + j) % seed_vals.len()];
                }
            }
            for i in 0..d {
                via_flat.as_mut_slice()[i] = seed_vals[i % seed_vals.len()];
            }
            let bits_a: Vec<u64> = via_blocks.as_slice().iter().map(|x| x.to_bits()).collect();
            let bits_b: Vec<u64> = via_flat.as_slice().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);

            let views: Vec<&[f64]> = via_blocks.blocks().collect();
            let rebuilt = PartitionedVector::concat(layout, &views).unwrap();
            prop_assert_eq!(rebuilt, via_blocks);
        }
    }
}
