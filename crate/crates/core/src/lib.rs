//! Full and marginalised MCMC for Gaussian mixtures and the Dawid–Skene
//! rating model, a slice-within-Gibbs sampler, a NUTS sampler, convergence
//! diagnostics and a benchmark harness measuring time per effective sample.

pub mod bench;
pub mod chain;
pub mod dawid_skene;
pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod mixture;
pub mod model;
pub mod nuts;
pub mod oracle;
pub mod slice;
pub mod simulate;
pub mod stats;
pub mod transform;

pub use error::{Error, Result};
