//! Gromov-Wasserstein information bottleneck for counterfactual regression.
//!
//! The crate is organised bottom-up:
//!
//! - [`ot`]: exact EMD, GW and fused objectives, conditional gradient.
//! - [`kmi`]: kernel density and kernelized mutual information estimates,
//!   the GW-based upper bound, and the Gromovized Monge gap.
//! - [`model`]: a two-head counterfactual regression network with
//!   hand-written backpropagation, including the transport regularizer.
//! - [`trainer`]: the bi-level training loop and its ablation variants.
//! - [`data`] and [`metrics`]: cohort I/O, splits, synthetic cohorts, and
//!   treatment-effect error metrics.
//!
//! Heavy kernels go through [`par`], which uses rayon with the default
//! `parallel` feature and plain loops without it.

pub mod data;
pub mod error;
pub mod kmi;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod ot;
pub mod par;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
