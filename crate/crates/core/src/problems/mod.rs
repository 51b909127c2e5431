//! Objectives with exact gradients.

mod example1;
mod mlp;
mod two_task;

pub use example1::{example1_grad, example1_loss, Example1Problem, Example1Spec};
pub use mlp::{mlp_forward, mlp_loss_and_grad, Batch, MlpSpec, Sample};
pub use two_task::{make_two_task_data, pretrain, PretrainOutcome, TwoTaskConfig, TwoTaskProblem};

use std::sync::Arc;

use crate::error::Result;
use crate::partition::{BlockLayout, PartitionedVector};

/// A fine-tuning objective plus the reference point it starts from.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    fn layout(&self) -> &Arc<BlockLayout>;

    /// Reference ("pre-trained") parameters; runs start here.
    fn theta0(&self) -> &PartitionedVector;

    fn loss(&self, theta: &PartitionedVector) -> Result<f64>;

    fn grad(&self, theta: &PartitionedVector) -> Result<PartitionedVector>;

    fn loss_and_grad(&self, theta: &PartitionedVector) -> Result<(f64, PartitionedVector)> {
        Ok((self.loss(theta)?, self.grad(theta)?))
    }

    /// Loss and gradient used at optimizer step `t` (1-based). Full batch
    /// unless the problem is configured for mini-batches.
    fn loss_and_grad_at(&self, theta: &PartitionedVector, _t: u64) -> Result<(f64, PartitionedVector)> {
        self.loss_and_grad(theta)
    }

    /// The loss whose increase measures forgetting (pre-training / task A).
    fn aux_loss(&self, theta: &PartitionedVector) -> Result<f64>;

    /// Optional estimate of the gradient's Lipschitz constant.
    fn lipschitz_estimate(&self) -> Option<f64> {
        None
    }
}

/// `½ ||θ||²`, the pre-training loss with its minimum at the origin.
pub fn pretrain_quadratic_loss(theta: &PartitionedVector) -> f64 {
    0.5 * theta.as_slice().iter().map(|x| x * x).sum::<f64>()
}

pub fn pretrain_quadratic_grad(theta: &PartitionedVector) -> PartitionedVector {
    theta.clone()
}
