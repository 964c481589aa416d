//! Deep Kolmogorov method with unbounded initial functions.
//!
//! The endpoint solution `f_d(·, T)` of a linear Kolmogorov PDE on a hypercube
//! is learned by empirical risk minimization over clipped ReLU networks, with
//! training pairs simulated from the associated SDE. Alongside the learner the
//! crate provides reference solutions (closed forms and Monte Carlo), the
//! explicit sample-size/truncation formulas behind the generalization bound,
//! and empirical checks of the tail and moment conditions they rely on.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod erm_train;
pub mod bounds;
pub mod error;
pub mod neural;
pub mod oracle;
pub mod pde_model;
pub mod sde_sim;
pub mod stats;

pub use error::{KolmoError, Result};
