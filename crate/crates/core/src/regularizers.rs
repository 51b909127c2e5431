//! L1 / L2 penalties on the distance to a reference point `θ0`.

use std::fmt;
use std::str::FromStr;

use crate::error::{MofoError, Result};
use crate::partition::PartitionedVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    None,
    /// `λ ||θ − θ0||_1`
    L1,
    /// `λ ||θ − θ0||_2^2`
    L2,
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegKind::None => "none",
            RegKind::L1 => "l1",
            RegKind::L2 => "l2",
        })
    }
}

impl FromStr for RegKind {
    type Err = MofoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "" => Ok(RegKind::None),
            "l1" => Ok(RegKind::L1),
            "l2" => Ok(RegKind::L2),
            other => Err(MofoError::Config(format!("unknown regularizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegSpec {
    pub kind: RegKind,
    pub lambda: f64,
    pub theta0: PartitionedVector,
}

impl RegSpec {
    pub fn new(kind: RegKind, lambda: f64, theta0: PartitionedVector) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(MofoError::InvalidArgument(format!(
                "regularization strength {lambda} must be >= 0"
            )));
        }
        Ok(Self { kind, lambda, theta0 })
    }

    pub fn none(theta0: PartitionedVector) -> Self {
        Self {
            kind: RegKind::None,
            lambda: 0.0,
            theta0,
        }
    }

    /// Penalty value alone.
    pub fn penalty(&self, theta: &PartitionedVector) -> Result<f64> {
        let diff = theta.sub(&self.theta0)?;
        Ok(match self.kind {
            RegKind::None => 0.0,
            RegKind::L1 => self.lambda * diff.norm_l1(),
            RegKind::L2 => self.lambda * diff.as_slice().iter().map(|d| d * d).sum::<f64>(),
        })
    }
}

/// Adds the penalty and its (sub)gradient to a base loss and gradient.
/// The L1 subgradient at a zero difference is taken as 0.
pub fn regularized_loss_and_grad(
    base_loss: f64,
    base_grad: &PartitionedVector,
    theta: &PartitionedVector,
    spec: &RegSpec,
) -> Result<(f64, PartitionedVector)> {
    if !(spec.lambda.is_finite() && spec.lambda >= 0.0) {
        return Err(MofoError::InvalidArgument(format!(
            "regularization strength {} must be >= 0",
            spec.lambda
        )));
    }
    theta.ensure_same_layout(base_grad)?;
    let diff = theta.sub(&spec.theta0)?;
    let lambda = spec.lambda;
    let (penalty, grad): (f64, Vec<f64>) = match spec.kind {
        RegKind::None => return Ok((base_loss, base_grad.clone())),
        RegKind::L2 => (
            lambda * diff.as_slice().iter().map(|d| d * d).sum::<f64>(),
            base_grad
                .as_slice()
                .iter()
                .zip(diff.as_slice())
                .map(|(g, d)| g + 2.0 * lambda * d)
                .collect(),
        ),
        RegKind::L1 => (
            lambda * diff.norm_l1(),
            base_grad
                .as_slice()
                .iter()
                .zip(diff.as_slice())
                .map(|(g, &d)| g + lambda * crate::optimizers::sign(d))
                .collect(),
        ),
    };
    Ok((base_loss + penalty, base_grad.with_values(grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::BlockLayout;

    fn pv(values: &[f64]) -> PartitionedVector {
        PartitionedVector::new(BlockLayout::shared([("x", values.len())]).unwrap(), values.to_vec())
            .unwrap()
    }

    #[test]
    fn at_reference_nothing_changes() {
        let theta0 = pv(&[1.0, -2.0]);
        let g = pv(&[0.3, 0.4]);
        for kind in [RegKind::L1, RegKind::L2, RegKind::None] {
            let spec = RegSpec::new(kind, 3.0, theta0.clone()).unwrap();
            let (l, gr) = regularized_loss_and_grad(1.5, &g, &theta0, &spec).unwrap();
            assert_eq!(l, 1.5);
            assert_eq!(gr, g);
        }
    }

    #[test]
    fn l2_example() {
        let spec = RegSpec::new(RegKind::L2, 0.5, pv(&[0.0, 0.0])).unwrap();
        let (l, g) = regularized_loss_and_grad(0.0, &pv(&[0.0, 0.0]), &pv(&[1.0, -2.0]), &spec)
            .unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn l1_example() {
        let spec = RegSpec::new(RegKind::L1, 1.0, pv(&[0.0, 0.0])).unwrap();
        let (l, g) =
            regularized_loss_and_grad(0.0, &pv(&[0.0, 0.0]), &pv(&[0.0, 3.0]), &spec).unwrap();
        assert_eq!(l, 3.0);
        assert_eq!(g.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn errors() {
        assert!(RegSpec::new(RegKind::L2, -1.0, pv(&[0.0])).is_err());
        let spec = RegSpec {
            kind: RegKind::L2,
            lambda: -0.1,
            theta0: pv(&[0.0]),
        };
        assert!(regularized_loss_and_grad(0.0, &pv(&[0.0]), &pv(&[1.0]), &spec).is_err());
        let spec = RegSpec::new(RegKind::L2, 1.0, pv(&[0.0, 0.0])).unwrap();
        assert_eq!(
            regularized_loss_and_grad(0.0, &pv(&[0.0]), &pv(&[1.0]), &spec),
            Err(MofoError::LayoutMismatch)
        );
    }

    #[test]
    fn l2_gradient_step_pulls_toward_reference() {
        let theta0 = pv(&[0.5, -1.0, 2.0]);
        let lambda = 0.8;
        let spec = RegSpec::new(RegKind::L2, lambda, theta0.clone()).unwrap();
        let mut theta = pv(&[3.0, 1.0, -4.0]);
        let zero = pv(&[0.0; 3]);
        for step in [0.01, 0.1, 0.5 / lambda * 0.99] {
            let before = theta.sub(&theta0).unwrap().norm_l2();
            let (_, g) = regularized_loss_and_grad(0.0, &zero, &theta, &spec).unwrap();
            theta = theta.sub(&g.scale(step).unwrap()).unwrap();
            let after = theta.sub(&theta0).unwrap().norm_l2();
            assert!(after < before);
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("L2".parse::<RegKind>().unwrap(), RegKind::L2);
        assert!("ewc".parse::<RegKind>().is_err());
    }
}
