//! The Gibbs sampler.

pub mod context;
pub mod dist;
pub mod steps;
pub mod sweep;

pub use context::{GibbsContext, SiteCache};
pub use dist::{gumbel_max, slice_sample, softmax, GammaConditional, ScalarGaussian};
pub use steps::*;
pub use sweep::{sweep, sweep_with, SweepOptions};

#[cfg(test)]
mod tests;
