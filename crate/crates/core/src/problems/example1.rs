//! The product-of-squares objective `L(θ) = Π (a_i θ_i − b_i)²`.
//!
//! Its global minima form the union of the hyperplanes `θ_i = b_i / a_i`.
//! Starting from the origin (the minimiser of `½||θ||²`), an optimizer that
//! moves every coordinate at once lands on a point with several nonzero
//! coordinates, while one that commits to a single coordinate lands on the
//! hyperplane closest to the origin along that axis.

use std::sync::Arc;

use super::{pretrain_quadratic_loss, Problem};
use crate::error::{MofoError, Result};
use crate::partition::{BlockLayout, PartitionedVector};

#[derive(Debug, Clone, PartialEq)]
pub struct Example1Spec {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Example1Spec {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(MofoError::LengthMismatch {
                expected: a.len(),
                actual: b.len(),
            });
        }
        if let Some(x) = a.iter().chain(&b).find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(MofoError::InvalidArgument(format!(
                "coefficients must be positive, got {x}"
            )));
        }
        Ok(Self { a, b })
    }

    /// `a = b = (1, …, 1)`.
    pub fn unit(d: usize) -> Result<Self> {
        Self::new(vec![1.0; d], vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Index of the hyperplane nearest the origin, `argmin b_i / a_i`
    /// (smallest index on ties).
    pub fn nearest_hyperplane(&self) -> usize {
        let ratios: Vec<f64> = self.a.iter().zip(&self.b).map(|(a, b)| b / a).collect();
        (0..ratios.len())
            .min_by(|&i, &j| ratios[i].total_cmp(&ratios[j]).then(i.cmp(&j)))
            .unwrap_or(0)
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(MofoError::LengthMismatch {
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        Ok(())
    }

    /// Factors `a_i (θ_i − b_i / a_i)`, exactly zero on each hyperplane, and
    /// the log-magnitude of the product of their squares (`None` when some
    /// factor vanishes).
    fn factors(&self, theta: &[f64]) -> (Vec<f64>, Option<f64>) {
        let f: Vec<f64> = self
            .a
            .iter()
            .zip(&self.b)
            .zip(theta)
            .map(|((a, b), x)| a * (x - b / a))
            .collect();
        let log_sq = if f.contains(&0.0) {
            None
        } else {
            Some(f.iter().map(|x| 2.0 * x.abs().ln()).sum())
        };
        (f, log_sq)
    }

    pub fn loss_slice(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta)?;
        Ok(match self.factors(theta).1 {
            Some(log_sq) => log_sq.exp(),
            None => 0.0,
        })
    }

    pub fn grad_slice(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(theta)?;
        let (f, log_sq) = self.factors(theta);
        let Some(log_sq) = log_sq else {
            // Any vanishing factor zeroes every partial derivative.
            return Ok(vec![0.0; f.len()]);
        };
        Ok(f
            .iter()
            .zip(&self.a)
            .map(|(&fi, &ai)| 2.0 * ai * fi.signum() * (log_sq - fi.abs().ln()).exp())
            .collect())
    }
}

pub fn example1_loss(spec: &Example1Spec, theta: &PartitionedVector) -> Result<f64> {
    spec.loss_slice(theta.as_slice())
}

pub fn example1_grad(spec: &Example1Spec, theta: &PartitionedVector) -> Result<PartitionedVector> {
    theta.with_values(spec.grad_slice(theta.as_slice())?)
}

/// Fine-tune on the product objective from the origin; forgetting is
/// measured by `½||θ||²`.
#[derive(Debug, Clone)]
pub struct Example1Problem {
    spec: Example1Spec,
    layout: Arc<BlockLayout>,
    theta0: PartitionedVector,
}

impl Example1Problem {
    pub fn new(spec: Example1Spec) -> Result<Self> {
        let layout = BlockLayout::shared([("theta", spec.dim())])?;
        let theta0 = PartitionedVector::zeros(layout.clone());
        Ok(Self {
            spec,
            layout,
            theta0,
        })
    }

    pub fn spec(&self) -> &Example1Spec {
        &self.spec
    }
}

impl Problem for Example1Problem {
    fn name(&self) -> &str {
        "example1"
    }

    fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    fn theta0(&self) -> &PartitionedVector {
        &self.theta0
    }

    fn loss(&self, theta: &PartitionedVector) -> Result<f64> {
        example1_loss(&self.spec, theta)
    }

    fn grad(&self, theta: &PartitionedVector) -> Result<PartitionedVector> {
        example1_grad(&self.spec, theta)
    }

    fn aux_loss(&self, theta: &PartitionedVector) -> Result<f64> {
        Ok(pretrain_quadratic_loss(theta))
    }
}
