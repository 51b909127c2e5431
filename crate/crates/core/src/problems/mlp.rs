//! One-hidden-layer tanh network with a linear read-out, trained on mean
//! squared error. Each weight matrix and bias vector is its own block:
//! `w1` (hidden × input, row-major), `b1`, `w2` (output × hidden), `b2`.

use std::sync::Arc;

use rand::Rng;

use crate::error::{MofoError, Result};
use crate::partition::{BlockLayout, PartitionedVector};
use crate::rng::RunRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub type Batch = Vec<Sample>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: usize, output: usize) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(MofoError::InvalidArgument(format!(
                "layer sizes must be >= 1, got {input}-{hidden}-{output}"
            )));
        }
        Ok(Self {
            input,
            hidden,
            output,
        })
    }

    pub fn layout(&self) -> Result<Arc<BlockLayout>> {
        BlockLayout::shared([
            ("w1", self.hidden * self.input),
            ("b1", self.hidden),
            ("w2", self.output * self.hidden),
            ("b2", self.output),
        ])
    }

    pub fn num_params(&self) -> usize {
        self.hidden * (self.input + 1) + self.output * (self.hidden + 1)
    }

    /// Weights uniform in `±scale / sqrt(fan_in)`, biases zero.
    pub fn init(&self, rng: &mut RunRng, scale: f64) -> Result<PartitionedVector> {
        let layout = self.layout()?;
        let mut theta = PartitionedVector::zeros(layout);
        let s1 = scale / (self.input as f64).sqrt();
        let s2 = scale / (self.hidden as f64).sqrt();
        for w in theta.block_mut(0)? {
            *w = rng.random_range(-s1..=s1);
        }
        for w in theta.block_mut(2)? {
            *w = rng.random_range(-s2..=s2);
        }
        Ok(theta)
    }

    fn check(&self, theta: &PartitionedVector) -> Result<()> {
        let expected = self.layout()?;
        if **theta.layout() != *expected {
            return Err(MofoError::LayoutMismatch);
        }
        Ok(())
    }
}

struct Params<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

impl<'a> Params<'a> {
    fn split(theta: &'a PartitionedVector) -> Result<Self> {
        Ok(Self {
            w1: theta.block(0)?,
            b1: theta.block(1)?,
            w2: theta.block(2)?,
            b2: theta.block(3)?,
        })
    }
}

fn hidden_activations(spec: &MlpSpec, p: &Params<'_>, x: &[f64]) -> Vec<f64> {
    (0..spec.hidden)
        .map(|j| {
            let row = &p.w1[j * spec.input..(j + 1) * spec.input];
            let z: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + p.b1[j];
            z.tanh()
        })
        .collect()
}

fn readout(spec: &MlpSpec, p: &Params<'_>, h: &[f64]) -> Vec<f64> {
    (0..spec.output)
        .map(|k| {
            let row = &p.w2[k * spec.hidden..(k + 1) * spec.hidden];
            row.iter().zip(h).map(|(w, h)| w * h).sum::<f64>() + p.b2[k]
        })
        .collect()
}

pub fn mlp_forward(spec: &MlpSpec, theta: &PartitionedVector, x: &[f64]) -> Result<Vec<f64>> {
    spec.check(theta)?;
    if x.len() != spec.input {
        return Err(MofoError::LengthMismatch {
            expected: spec.input,
            actual: x.len(),
        });
    }
    let p = Params::split(theta)?;
    Ok(readout(spec, &p, &hidden_activations(spec, &p, x)))
}

fn check_batch(spec: &MlpSpec, batch: &[Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(MofoError::InvalidArgument("empty batch".into()));
    }
    for s in batch {
        if s.x.len() != spec.input || s.y.len() != spec.output {
            return Err(MofoError::LengthMismatch {
                expected: spec.input + spec.output,
                actual: s.x.len() + s.y.len(),
            });
        }
    }
    Ok(())
}

/// Mean squared error over the batch (and output units) only.
pub fn mlp_loss(spec: &MlpSpec, theta: &PartitionedVector, batch: &[Sample]) -> Result<f64> {
    spec.check(theta)?;
    check_batch(spec, batch)?;
    let p = Params::split(theta)?;
    let mut total = 0.0;
    for s in batch {
        let out = readout(spec, &p, &hidden_activations(spec, &p, &s.x));
        total += out.iter().zip(&s.y).map(|(o, y)| (o - y).powi(2)).sum::<f64>();
    }
    Ok(total / (batch.len() * spec.output) as f64)
}

/// Mean squared error and its gradient by reverse-mode differentiation.
pub fn mlp_loss_and_grad(
    spec: &MlpSpec,
    theta: &PartitionedVector,
    batch: &[Sample],
) -> Result<(f64, PartitionedVector)> {
    spec.check(theta)?;
    check_batch(spec, batch)?;
    let p = Params::split(theta)?;
    let (ni, nh, no) = (spec.input, spec.hidden, spec.output);
    let norm = 1.0 / (batch.len() * no) as f64;

    let mut gw1 = vec![0.0; nh * ni];
    let mut gb1 = vec![0.0; nh];
    let mut gw2 = vec![0.0; no * nh];
    let mut gb2 = vec![0.0; no];
    let mut total = 0.0;

    for s in batch {
        let h = hidden_activations(spec, &p, &s.x);
        let out = readout(spec, &p, &h);
        let mut dh = vec![0.0; nh];
        for k in 0..no {
            let err = out[k] - s.y[k];
            total += err * err;
            let d_out = 2.0 * err * norm;
            gb2[k] += d_out;
            for j in 0..nh {
                gw2[k * nh + j] += d_out * h[j];
                dh[j] += d_out * p.w2[k * nh + j];
            }
        }
        for j in 0..nh {
            let dz = dh[j] * (1.0 - h[j] * h[j]);
            gb1[j] += dz;
            for i in 0..ni {
                gw1[j * ni + i] += dz * s.x[i];
            }
        }
    }

    let grad = PartitionedVector::concat(theta.layout().clone(), &[&gw1, &gb1, &gw2, &gb2])?;
    Ok((total * norm, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn batch_from(xs: &[[f64; 2]], ys: &[f64]) -> Batch {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| Sample { x: x.to_vec(), y: vec![y] })
            .collect()
    }

    fn fd_check(spec: &MlpSpec, theta: &PartitionedVector, batch: &[Sample]) -> f64 {
        let (_, g) = mlp_loss_and_grad(spec, theta, batch).unwrap();
        let mut worst = 0.0f64;
        for i in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta.as_slice()[i].abs());
            let mut p = theta.clone();
            let mut m = theta.clone();
            p.as_mut_slice()[i] += h;
            m.as_mut_slice()[i] -= h;
            let fd = (mlp_loss(spec, &p, batch).unwrap() - mlp_loss(spec, &m, batch).unwrap()) / (2.0 * h);
            let gi = g.as_slice()[i];
            let rel = (fd - gi).abs() / gi.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn zero_network_zero_targets() {
        let spec = MlpSpec::new(2, 4, 1).unwrap();
        let theta = PartitionedVector::zeros(spec.layout().unwrap());
        let batch = batch_from(&[[0.3, -1.0], [2.0, 0.5]], &[0.0, 0.0]);
        let (l, g) = mlp_loss_and_grad(&spec, &theta, &batch).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_hidden_unit_matches_finite_differences() {
        let spec = MlpSpec::new(2, 1, 1).unwrap();
        let theta = PartitionedVector::new(spec.layout().unwrap(), vec![0.7, -0.4, 0.1, 1.3, -0.2])
            .unwrap();
        let batch = batch_from(&[[0.5, 1.0], [-1.0, 0.25], [0.0, -0.75]], &[0.3, -0.6, 0.9]);
        assert!(fd_check(&spec, &theta, &batch) < 1e-6);
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_grad() {
        let spec = MlpSpec::new(2, 3, 2).unwrap();
        let theta = spec.init(&mut rng::seeded(5, 0), 1.0).unwrap();
        let batch: Batch = (0..4)
            .map(|i| Sample { x: vec![i as f64 * 0.3, -0.2], y: vec![0.1 * i as f64, -0.5] })
            .collect();
        let doubled: Batch = batch.iter().chain(&batch).cloned().collect();
        let (l1, g1) = mlp_loss_and_grad(&spec, &theta, &batch).unwrap();
        let (l2, g2) = mlp_loss_and_grad(&spec, &theta, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn errors() {
        assert!(MlpSpec::new(2, 0, 1).is_err());
        let spec = MlpSpec::new(2, 3, 1).unwrap();
        let theta = PartitionedVector::zeros(spec.layout().unwrap());
        assert!(mlp_loss_and_grad(&spec, &theta, &[]).is_err());
        let other = PartitionedVector::zeros(MlpSpec::new(2, 4, 1).unwrap().layout().unwrap());
        assert_eq!(
            mlp_loss_and_grad(&spec, &other, &batch_from(&[[0.0, 0.0]], &[0.0])),
            Err(MofoError::LayoutMismatch)
        );
    }

    #[test]
    fn layout_blocks() {
        let spec = MlpSpec::new(2, 16, 1).unwrap();
        let l = spec.layout().unwrap();
        assert_eq!(l.lengths(), &[32, 16, 16, 1]);
        assert_eq!(l.dim(), spec.num_params());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000) {
            let spec = MlpSpec::new(2, 5, 2).unwrap();
            let mut r = rng::seeded(seed, 9);
            let theta = spec.init(&mut r, 1.5).unwrap();
            let batch: Batch = (0..6)
                .map(|_| Sample {
                    x: vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                    y: vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                })
                .collect();
            prop_assert!(fd_check(&spec, &theta, &batch) < 1e-5);
        }
    }
}
