//! Hyperparameters and the complete unknown state of the model.
//!
//! Symbol homes (one field per symbol of the generative model):
//!
//! | symbol                          | home                                  |
//! |---------------------------------|---------------------------------------|
//! | Δ                               | `ModelState::lag`                     |
//! | γ_p                             | `ModelState::gamma`                   |
//! | θ_{ℓ,i}                         | `ModelState::theta` (L x n)           |
//! | φ_{j,ℓ}                         | `ModelState::phi` (J x L)             |
//! | μ_k                             | `ModelState::mu`                      |
//! | α_{k,i}                         | `ModelState::alpha` (K x n)           |
//! | ψ_{h,k}                         | `ModelState::psi` (H x K)             |
//! | σ²_{εx}, σ²_{εy}                | `sigma2_eps_x`, `sigma2_eps_y`        |
//! | σ²_{θℓ}                         | `ModelState::sigma2_theta`            |
//! | λ_γ, λ_{fk}, λ_{gℓ}             | `lambda_gamma`, `lambda_f`, `lambda_g`|
//! | δ_{μk}, δ_{αk}                  | `delta_mu`, `delta_alpha`             |
//! | ζ_{α k,i}                       | `ModelState::zeta` (K x n)            |
//! | ν_α                             | `ModelState::nu_alpha`                |
//! | a_{μ1}, a_{μ2}, a_{α1}, a_{α2}  | `a_mu1`, `a_mu2`, `a_alpha1`, `a_alpha2` |
//! | σ⁻²_{μk}, σ⁻²_{αk}              | derived: `precision_mu`, `precision_alpha` |
//! | K, L, P, H, J                   | `Hyperparams::{k_factors, l_factors, p_gamma, h_lrtps, j_dr}` |
//! | Δ_max                           | `Hyperparams::max_lag`                |
//! | a_{εx}, b_{εx}, a_{εy}, b_{εy}  | `Hyperparams::{a_eps_x, b_eps_x, a_eps_y, b_eps_y}` |
//! | Gamma(.01, .01) on σ⁻²_{θℓ}     | `Hyperparams::{a_theta, b_theta}`     |
//! | Uniform(0, 10⁴) on λ^{-1/2}     | `Hyperparams::lambda_sd_upper`        |
//! | Uniform(2, 128) on ν_α          | `Hyperparams::{nu_lower, nu_upper}`   |
//! | Gamma(2, 1) on the a's          | `Hyperparams::{a_prior_shape, a_prior_rate}` |
//! | D, Q                            | `SpatialGraph::{weights, q}`          |

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::SpatialConfig;

/// Tolerance on `Ψ'Ψ = I` and `Φ'Φ = I`.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceSettings {
    /// Initial bracket width for the Gamma-shape parameters `a`.
    pub width_shape: f64,
    /// Initial bracket width for `ν_α`.
    pub width_nu: f64,
    /// Cap on stepping-out steps per side.
    pub max_steps: usize,
}

impl Default for SliceSettings {
    fn default() -> Self {
        Self { width_shape: 1.0, width_nu: 10.0, max_steps: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub k_factors: usize,
    pub l_factors: usize,
    pub p_gamma: usize,
    pub h_lrtps: usize,
    pub j_dr: usize,
    pub max_lag: usize,
    pub a_eps_x: f64,
    pub b_eps_x: f64,
    pub a_eps_y: f64,
    pub b_eps_y: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub lambda_sd_upper: f64,
    pub nu_lower: f64,
    pub nu_upper: f64,
    pub a_prior_shape: f64,
    pub a_prior_rate: f64,
    /// Precision of the proper Gaussian placed on the nullspace of each
    /// roughness penalty (constant and linear directions).
    pub null_precision: f64,
    pub spatial: SpatialConfig,
    pub slice: SliceSettings,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k_factors: 8,
            l_factors: 4,
            p_gamma: 10,
            h_lrtps: 20,
            j_dr: 30,
            max_lag: 21,
            a_eps_x: 0.001,
            b_eps_x: 0.001,
            a_eps_y: 0.001,
            b_eps_y: 0.001,
            a_theta: 0.01,
            b_theta: 0.01,
            lambda_sd_upper: 1e4,
            nu_lower: 2.0,
            nu_upper: 128.0,
            a_prior_shape: 2.0,
            a_prior_rate: 1.0,
            null_precision: 1e-6,
            spatial: SpatialConfig::default(),
            slice: SliceSettings::default(),
        }
    }
}

impl Hyperparams {
    /// Defaults with the basis sizes tied to a grid of `days` observation
    /// days: one B-spline coefficient per month and up to 30 Demmler–Reinsch
    /// directions.
    pub fn for_grid(days: usize) -> Self {
        Self {
            p_gamma: days.div_ceil(30).max(4),
            j_dr: days.min(30),
            ..Self::default()
        }
    }

    /// Lower bound on every smoothing precision λ implied by
    /// `λ^{-1/2} ~ Uniform(0, lambda_sd_upper)`.
    pub fn lambda_lower(&self) -> f64 {
        self.lambda_sd_upper.powi(-2)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_factors", self.k_factors),
            ("l_factors", self.l_factors),
            ("p_gamma", self.p_gamma),
            ("h_lrtps", self.h_lrtps),
            ("j_dr", self.j_dr),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be at least 1")));
            }
        }
        if self.p_gamma < 4 {
            return Err(Error::Argument("p_gamma must be at least 4 (cubic B-splines)".into()));
        }
        if self.h_lrtps < 4 || self.j_dr < 4 {
            return Err(Error::Argument(
                "h_lrtps and j_dr must be at least 4 so that every smoothing precision has a proper conditional"
                    .into(),
            ));
        }
        if self.k_factors > self.h_lrtps || self.l_factors > self.j_dr {
            return Err(Error::Argument(
                "orthonormal loadings need k_factors <= h_lrtps and l_factors <= j_dr".into(),
            ));
        }
        let positives = [
            ("a_eps_x", self.a_eps_x),
            ("b_eps_x", self.b_eps_x),
            ("a_eps_y", self.a_eps_y),
            ("b_eps_y", self.b_eps_y),
            ("a_theta", self.a_theta),
            ("b_theta", self.b_theta),
            ("lambda_sd_upper", self.lambda_sd_upper),
            ("a_prior_shape", self.a_prior_shape),
            ("a_prior_rate", self.a_prior_rate),
            ("null_precision", self.null_precision),
            ("slice.width_shape", self.slice.width_shape),
            ("slice.width_nu", self.slice.width_nu),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.nu_lower > 0.0 && self.nu_lower < self.nu_upper) {
            return Err(Error::Argument("need 0 < nu_lower < nu_upper".into()));
        }
        if !(self.spatial.quantile > 0.0 && self.spatial.quantile <= 1.0) || self.spatial.jitter_rel < 0.0 {
            return Err(Error::Argument("spatial settings out of range".into()));
        }
        Ok(())
    }
}

/// Every unknown of the model for one chain position. Variances are stored
/// as variances; their priors are stated on the precision scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub lag: usize,
    pub gamma: DVector<f64>,
    pub theta: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub alpha: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub sigma2_eps_x: f64,
    pub sigma2_eps_y: f64,
    pub sigma2_theta: DVector<f64>,
    pub lambda_gamma: f64,
    pub lambda_f: DVector<f64>,
    pub lambda_g: DVector<f64>,
    pub delta_mu: DVector<f64>,
    pub delta_alpha: DVector<f64>,
    pub zeta: DMatrix<f64>,
    pub nu_alpha: f64,
    pub a_mu1: f64,
    pub a_mu2: f64,
    pub a_alpha1: f64,
    pub a_alpha2: f64,
}

fn cumulative_product(d: &DVector<f64>) -> DVector<f64> {
    let mut acc = 1.0;
    d.map(|v| {
        acc *= v;
        acc
    })
}

impl ModelState {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn l(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n(&self) -> usize {
        self.theta.ncols()
    }

    /// `σ⁻²_{μk} = ∏_{k* <= k} δ_{μk*}`.
    pub fn precision_mu(&self) -> DVector<f64> {
        cumulative_product(&self.delta_mu)
    }

    /// `σ⁻²_{αk} = ∏_{k* <= k} δ_{αk*}`.
    pub fn precision_alpha(&self) -> DVector<f64> {
        cumulative_product(&self.delta_alpha)
    }

    /// Factor scores `β_{k,i} = μ_k + α_{k,i}`.
    pub fn beta(&self) -> DMatrix<f64> {
        let mut b = self.alpha.clone();
        for (k, mut row) in b.row_iter_mut().enumerate() {
            row.add_scalar_mut(self.mu[k]);
        }
        b
    }

    /// Largest deviation of `Ψ'Ψ` and `Φ'Φ` from the identity. With
    /// orthonormal known bases this equals the deviation of `F'F` and `G'G`.
    pub fn orthogonality_error(&self) -> f64 {
        let dev = |m: &DMatrix<f64>| (m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols())).abs().max();
        dev(&self.psi).max(dev(&self.phi))
    }

    /// Checks dimensions against `hp` and `n` sites, support constraints and
    /// loading orthonormality.
    pub fn validate(&self, hp: &Hyperparams, n: usize) -> Result<()> {
        self.validate_support(hp, n)?;
        let orth = self.orthogonality_error();
        if !(orth <= ORTHOGONALITY_TOL) {
            return Err(Error::InvalidState(format!("loading orthonormality error {orth:.3e}")));
        }
        Ok(())
    }

    /// Dimensions and parameter supports only (no orthonormality check).
    pub fn validate_support(&self, hp: &Hyperparams, n: usize) -> Result<()> {
        let (k, l) = (hp.k_factors, hp.l_factors);
        let dims = [
            ("gamma", self.gamma.len(), 1, hp.p_gamma, 1),
            ("theta", self.theta.nrows(), self.theta.ncols(), l, n),
            ("phi", self.phi.nrows(), self.phi.ncols(), hp.j_dr, l),
            ("mu", self.mu.len(), 1, k, 1),
            ("alpha", self.alpha.nrows(), self.alpha.ncols(), k, n),
            ("psi", self.psi.nrows(), self.psi.ncols(), hp.h_lrtps, k),
            ("sigma2_theta", self.sigma2_theta.len(), 1, l, 1),
            ("lambda_f", self.lambda_f.len(), 1, k, 1),
            ("lambda_g", self.lambda_g.len(), 1, l, 1),
            ("delta_mu", self.delta_mu.len(), 1, k, 1),
            ("delta_alpha", self.delta_alpha.len(), 1, k, 1),
            ("zeta", self.zeta.nrows(), self.zeta.ncols(), k, n),
        ];
        for (name, r, c, er, ec) in dims {
            if (r, c) != (er, ec) {
                return Err(Error::Dimension(format!("{name} is {r}x{c}, expected {er}x{ec}")));
            }
        }
        if self.lag > hp.max_lag {
            return Err(Error::InvalidState(format!("lag {} exceeds max {}", self.lag, hp.max_lag)));
        }
        let scalars = [
            ("sigma2_eps_x", self.sigma2_eps_x),
            ("sigma2_eps_y", self.sigma2_eps_y),
            ("lambda_gamma", self.lambda_gamma),
            ("a_mu1", self.a_mu1),
            ("a_mu2", self.a_mu2),
            ("a_alpha1", self.a_alpha1),
            ("a_alpha2", self.a_alpha2),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidState(format!("{name} = {v} must be positive")));
            }
        }
        let vectors = [
            ("sigma2_theta", self.sigma2_theta.as_slice()),
            ("lambda_f", self.lambda_f.as_slice()),
            ("lambda_g", self.lambda_g.as_slice()),
            ("delta_mu", self.delta_mu.as_slice()),
            ("delta_alpha", self.delta_alpha.as_slice()),
            ("zeta", self.zeta.as_slice()),
        ];
        for (name, vals) in vectors {
            if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidState(format!("{name} has a nonpositive entry")));
            }
        }
        if !(hp.nu_lower..=hp.nu_upper).contains(&self.nu_alpha) {
            return Err(Error::InvalidState(format!("nu_alpha = {} out of range", self.nu_alpha)));
        }
        let coef = [self.gamma.as_slice(), self.theta.as_slice(), self.mu.as_slice(), self.alpha.as_slice()];
        if coef.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("coefficient".into()));
        }
        Ok(())
    }
}
