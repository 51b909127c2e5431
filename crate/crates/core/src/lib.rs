//! Momentum-filtered Adam (MoFO) and a desk-scale forgetting testbed.
//!
//! The crate is organised bottom-up:
//!
//! - [`partition`]: named-block flat vectors shared by parameters and moments
//! - [`filter`]: the per-block top-α% selection and its induced norm
//! - [`optimizers`]: Adam, MoFO, Lion, MoFO+Lion and block-coordinate variants
//! - [`regularizers`]: L1/L2 pulls toward a reference point
//! - [`problems`]: the product-of-squares forgetting example and a small MLP
//! - [`metrics`]: distance-to-reference, stability and convergence diagnostics
//! - [`harness`]: seeded experiment runs, sweeps, CSV traces and SVG plots

pub mod error;
pub mod filter;
pub mod harness;
pub mod metrics;
pub mod optimizers;
pub mod partition;
pub mod problems;
pub mod regularizers;
pub mod rng;

pub use error::{MofoError, Result};
pub use partition::{BlockLayout, PartitionedVector};
