use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::bases::ModelBases;
use super::params::ModelState;
use crate::error::{Error, Result};

/// Curves implied by a state: latent wastewater `X_i` on the extended grid,
/// `γ`, the random effects `θ_i` and the noise-free positivity mean on the
/// observation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivedCurves {
    /// Extended grid x sites.
    pub x: DMatrix<f64>,
    /// Population mean curve `μ(τ) = Σ_k f_k(τ) μ_k` on the extended grid.
    pub mu: DVector<f64>,
    pub gamma: DVector<f64>,
    /// Observation grid x sites.
    pub theta: DMatrix<f64>,
    /// Observation grid x sites.
    pub fitted_y: DMatrix<f64>,
}

impl DerivedCurves {
    pub fn compute(state: &ModelState, bases: &ModelBases) -> Result<Self> {
        let grid = bases.grid;
        if state.lag > grid.extension {
            return Err(Error::Bounds { index: state.lag, len: grid.extension });
        }
        let f = bases.loading_x.eval() * &state.psi;
        let x = &f * state.beta();
        let mu = &f * &state.mu;
        let gamma = bases.gamma.eval() * &state.gamma;
        let g = bases.loading_theta.eval() * &state.phi;
        let theta = &g * &state.theta;
        let n = state.n();
        let fitted_y = DMatrix::from_fn(grid.len, n, |t, i| {
            gamma[t] * x[(grid.extension + t - state.lag, i)] + theta[(t, i)]
        });
        Ok(Self { x, mu, gamma, theta, fitted_y })
    }

    /// `X_i` restricted to the observation grid.
    pub fn x_observed(&self, extension: usize) -> DMatrix<f64> {
        self.x.rows(extension, self.x.nrows() - extension).into_owned()
    }
}

/// Noise-free positivity mean `γ(τ) X_i(τ - Δ) + θ_i(τ)` at the given
/// observation-grid indices of one site.
pub fn predict_y(state: &ModelState, bases: &ModelBases, site: usize, times: &[usize]) -> Result<DVector<f64>> {
    let grid = bases.grid;
    if site >= state.n() {
        return Err(Error::Bounds { index: site, len: state.n() });
    }
    let beta_i = state.psi.clone() * state.beta().column(site);
    let theta_i = &state.phi * state.theta.column(site);
    let mut out = DVector::zeros(times.len());
    for (r, &t) in times.iter().enumerate() {
        if t >= grid.len {
            return Err(Error::Bounds { index: t, len: grid.len });
        }
        let e = grid.extended_index(t, state.lag)?;
        let gamma_t = bases.gamma.eval().row(t).dot(&state.gamma.transpose());
        let x_t = bases.loading_x.eval().row(e).dot(&beta_i.transpose());
        let theta_t = bases.loading_theta.eval().row(t).dot(&theta_i.transpose());
        out[r] = gamma_t * x_t + theta_t;
    }
    Ok(out)
}

/// Posterior-predictive draw: the mean plus `N(0, σ²_εy)` noise.
pub fn sample_y<R: Rng + ?Sized>(
    state: &ModelState,
    bases: &ModelBases,
    site: usize,
    times: &[usize],
    rng: &mut R,
) -> Result<DVector<f64>> {
    let sd = state.sigma2_eps_y.sqrt();
    Ok(predict_y(state, bases, site, times)?.map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)))
}
