use super::context::GibbsContext;
use super::steps::*;
use crate::error::{Error, Result};
use crate::model::ModelState;

/// Which blocks a sweep updates. Holding the loadings fixed removes steps 3
/// and 6 (the loading curves and their smoothing precisions).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepOptions {
    pub update_loadings: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { update_loadings: true }
    }
}

/// One Gibbs iteration in the fixed order: γ block, θ, φ block, Δ, factors,
/// ψ block, MGP, variances, slice-sampled shapes.
pub fn sweep(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    sweep_with(state, ctx, SweepOptions::default())
}

pub fn sweep_with(state: &mut ModelState, ctx: &mut GibbsContext, opts: SweepOptions) -> Result<()> {
    ctx.refresh_lag(state.lag)?;
    step_gamma(state, ctx)?;
    step_theta(state, ctx)?;
    if opts.update_loadings {
        step_phi(state, ctx)?;
    }
    step_lag(state, ctx)?;
    step_factors(state, ctx)?;
    if opts.update_loadings {
        step_psi(state, ctx)?;
    }
    step_mgp(state, ctx)?;
    step_variances(state, ctx)?;
    step_slice(state, ctx)?;
    check_finite(state)
}

fn check_finite(state: &ModelState) -> Result<()> {
    let blocks = [
        ("gamma", state.gamma.as_slice()),
        ("theta", state.theta.as_slice()),
        ("phi", state.phi.as_slice()),
        ("mu", state.mu.as_slice()),
        ("alpha", state.alpha.as_slice()),
        ("psi", state.psi.as_slice()),
    ];
    for (name, v) in blocks {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{name} after sweep")));
        }
    }
    Ok(())
}
