//! Joint log-density of data and state.
//!
//! Conventions: variances carry their priors on the precision scale, so the
//! density is with respect to `(σ⁻²_εx, σ⁻²_εy, σ⁻²_θ)`, the λ's, δ's, ζ's,
//! ν_α and the a's, plus Lebesgue measure on every coefficient. Terms that do
//! not depend on any parameter are dropped: `½ log pdet(Ω)` for each penalty
//! and `½ log det(Q + εI)` for the CAR prior. Gaussian `2π` terms are kept.

use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;

use super::bases::{ModelBases, PenalizedBasis};
use super::curves::DerivedCurves;
use super::data::Dataset;
use super::params::{Hyperparams, ModelState};
use crate::error::{Error, Result};
use crate::spatial::{car_quadform, SpatialGraph};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log Gamma(x; shape, rate)`, `-inf` off the support.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log-density of λ implied by `λ^{-1/2} ~ Uniform(0, upper)`.
pub fn ln_lambda_prior(lambda: f64, upper: f64) -> f64 {
    if lambda < upper.powi(-2) {
        return f64::NEG_INFINITY;
    }
    -(2.0 * upper).ln() - 1.5 * lambda.ln()
}

/// Gaussian log-likelihood of residuals with a common variance.
pub fn ln_normal_sum(sum_sq: f64, count: usize, variance: f64) -> f64 {
    -0.5 * count as f64 * (LN_2PI + variance.ln()) - 0.5 * sum_sq / variance
}

/// Coefficient prior `N(0, (λΩ + κP0)⁻¹)` without `½ log pdet Ω`.
pub fn ln_penalized_prior(basis: &PenalizedBasis, coef: &DVector<f64>, lambda: f64, kappa: f64) -> f64 {
    let dim = coef.len() as f64;
    let rank = basis.rank as f64;
    let q_pen = (basis.penalty() * coef).dot(coef);
    let q_null = (&basis.null_projector * coef).dot(coef);
    0.5 * rank * lambda.ln() + 0.5 * (dim - rank) * kappa.ln() - 0.5 * lambda * q_pen - 0.5 * kappa * q_null
        - 0.5 * dim * LN_2PI
}

/// Every term of the joint log-density, kept apart so individual pieces can
/// be checked.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogJointTerms {
    pub lik_y: f64,
    pub lik_x: f64,
    pub prior_gamma: f64,
    pub prior_theta: f64,
    pub prior_phi: f64,
    pub prior_psi: f64,
    pub prior_mu: f64,
    pub prior_alpha: f64,
    pub prior_lambda: f64,
    pub prior_lag: f64,
    pub prior_noise: f64,
    pub prior_sigma_theta: f64,
    pub prior_delta: f64,
    pub prior_zeta: f64,
    pub prior_nu: f64,
    pub prior_a: f64,
}

impl LogJointTerms {
    pub fn likelihood(&self) -> f64 {
        self.lik_y + self.lik_x
    }

    pub fn total(&self) -> f64 {
        self.likelihood()
            + self.prior_gamma
            + self.prior_theta
            + self.prior_phi
            + self.prior_psi
            + self.prior_mu
            + self.prior_alpha
            + self.prior_lambda
            + self.prior_lag
            + self.prior_noise
            + self.prior_sigma_theta
            + self.prior_delta
            + self.prior_zeta
            + self.prior_nu
            + self.prior_a
    }
}

/// Sums of squared residuals and counts for both likelihoods.
pub fn residual_sums(state: &ModelState, data: &Dataset, bases: &ModelBases) -> Result<((f64, usize), (f64, usize))> {
    let curves = DerivedCurves::compute(state, bases)?;
    let ext = bases.grid.extension;
    let (mut ssy, mut my, mut ssx, mut mx) = (0.0, 0, 0.0, 0);
    for i in 0..data.n_sites() {
        for (&t, &v) in data.y[i].times.iter().zip(&data.y[i].values) {
            ssy += (v - curves.fitted_y[(t, i)]).powi(2);
            my += 1;
        }
        for (&t, &v) in data.x[i].times.iter().zip(&data.x[i].values) {
            ssx += (v - curves.x[(ext + t, i)]).powi(2);
            mx += 1;
        }
    }
    Ok(((ssy, my), (ssx, mx)))
}

fn check_consistent(state: &ModelState, data: &Dataset, hp: &Hyperparams, bases: &ModelBases, graph: &SpatialGraph) -> Result<()> {
    let n = data.n_sites();
    if graph.n() != n {
        return Err(Error::Dimension(format!("graph has {} sites, data {n}", graph.n())));
    }
    if data.grid != bases.grid {
        return Err(Error::Dimension("data grid differs from basis grid".into()));
    }
    if bases.gamma.dim() != hp.p_gamma || bases.loading_x.dim() != hp.h_lrtps || bases.loading_theta.dim() != hp.j_dr {
        return Err(Error::Dimension("basis sizes differ from hyperparameters".into()));
    }
    state.validate_support(hp, n)
}

pub fn log_joint_terms(
    state: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
    bases: &ModelBases,
    graph: &SpatialGraph,
) -> Result<LogJointTerms> {
    check_consistent(state, data, hp, bases, graph)?;
    let n = data.n_sites();
    let kappa = hp.null_precision;
    let ((ssy, my), (ssx, mx)) = residual_sums(state, data, bases)?;

    let mut t = LogJointTerms {
        lik_y: ln_normal_sum(ssy, my, state.sigma2_eps_y),
        lik_x: ln_normal_sum(ssx, mx, state.sigma2_eps_x),
        prior_gamma: ln_penalized_prior(&bases.gamma, &state.gamma, state.lambda_gamma, kappa),
        ..Default::default()
    };

    for l in 0..state.l() {
        let w = 1.0 / state.sigma2_theta[l];
        let th = state.theta.row(l).transpose();
        t.prior_theta += 0.5 * n as f64 * (w.ln() - LN_2PI) - 0.5 * w * car_quadform(graph, &th)?;
        t.prior_phi += ln_penalized_prior(&bases.loading_theta, &state.phi.column(l).into_owned(), state.lambda_g[l], kappa);
        t.prior_sigma_theta += ln_gamma_pdf(w, hp.a_theta, hp.b_theta);
    }
    let tau_mu = state.precision_mu();
    let tau_alpha = state.precision_alpha();
    for k in 0..state.k() {
        t.prior_psi += ln_penalized_prior(&bases.loading_x, &state.psi.column(k).into_owned(), state.lambda_f[k], kappa);
        t.prior_mu += ln_normal_sum(state.mu[k].powi(2), 1, 1.0 / tau_mu[k]);
        for i in 0..n {
            let prec = tau_alpha[k] * state.zeta[(k, i)];
            t.prior_alpha += ln_normal_sum(state.alpha[(k, i)].powi(2), 1, 1.0 / prec);
            t.prior_zeta += ln_gamma_pdf(state.zeta[(k, i)], 0.5 * state.nu_alpha, 0.5 * state.nu_alpha);
        }
        let (s_mu, s_alpha) = if k == 0 { (state.a_mu1, state.a_alpha1) } else { (state.a_mu2, state.a_alpha2) };
        t.prior_delta += ln_gamma_pdf(state.delta_mu[k], s_mu, 1.0) + ln_gamma_pdf(state.delta_alpha[k], s_alpha, 1.0);
    }
    let lambdas = std::iter::once(state.lambda_gamma).chain(state.lambda_f.iter().copied()).chain(state.lambda_g.iter().copied());
    t.prior_lambda = lambdas.map(|l| ln_lambda_prior(l, hp.lambda_sd_upper)).sum();
    t.prior_lag = -((hp.max_lag + 1) as f64).ln();
    t.prior_noise = ln_gamma_pdf(1.0 / state.sigma2_eps_x, hp.a_eps_x, hp.b_eps_x)
        + ln_gamma_pdf(1.0 / state.sigma2_eps_y, hp.a_eps_y, hp.b_eps_y);
    t.prior_nu = -(hp.nu_upper - hp.nu_lower).ln();
    t.prior_a = [state.a_mu1, state.a_mu2, state.a_alpha1, state.a_alpha2]
        .iter()
        .map(|&a| ln_gamma_pdf(a, hp.a_prior_shape, hp.a_prior_rate))
        .sum();
    Ok(t)
}

/// `log p(y, x, state | hp)` up to the constant described in the module docs.
pub fn log_joint(state: &ModelState, data: &Dataset, hp: &Hyperparams, bases: &ModelBases, graph: &SpatialGraph) -> Result<f64> {
    Ok(log_joint_terms(state, data, hp, bases, graph)?.total())
}
