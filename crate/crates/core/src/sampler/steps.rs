//! Full conditionals (steps 1 to 9 of the sweep). Every `*_conditional`
//! accessor returns the exact conditional the matching `step_*` draws from.

use nalgebra::{DMatrix, DVector};

use super::context::GibbsContext;
use super::dist::{slice_sample, GammaConditional, ScalarGaussian};
use crate::error::{Error, Result};
use crate::linalg::CanonicalGaussian;
use crate::model::density::ln_gamma_pdf;
use crate::model::{Hyperparams, ModelState, PenalizedBasis};

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        row *= s[r];
    }
    out
}

fn all_but(m: &DMatrix<f64>, col: usize) -> DMatrix<f64> {
    m.clone().remove_column(col).transpose()
}

/// Smoothing precision given its coefficient block: the Uniform prior on
/// `λ^{-1/2}` and the rank-`r` Gaussian give `Gamma((r-1)/2, c'Ωc/2)` on
/// `λ >= lambda_lower`.
pub fn lambda_conditional(basis: &PenalizedBasis, coef: &DVector<f64>, hp: &Hyperparams) -> GammaConditional {
    let q = (basis.penalty() * coef).dot(coef);
    GammaConditional::truncated(0.5 * (basis.rank as f64 - 1.0), 0.5 * q, hp.lambda_lower())
}

// ---- step 1 ----

pub fn lambda_gamma_conditional(state: &ModelState, ctx: &GibbsContext) -> GammaConditional {
    lambda_conditional(&ctx.bases.gamma, &state.gamma, &ctx.hp)
}

pub fn gamma_conditional(state: &ModelState, ctx: &GibbsContext) -> Result<CanonicalGaussian> {
    let basis = &ctx.bases.gamma;
    let w = 1.0 / state.sigma2_eps_y;
    let mut prec = basis.prior_precision(state.lambda_gamma, ctx.hp.null_precision);
    let mut lin = DVector::zeros(basis.dim());
    for (i, site) in ctx.sites.iter().enumerate() {
        if site.y.is_empty() {
            continue;
        }
        let d = scale_rows(&site.b_y, &ctx.x_at_y(state, i)?);
        prec += d.tr_mul(&d) * w;
        lin += d.tr_mul(&(&site.y - ctx.theta_at_y(state, i))) * w;
    }
    Ok(CanonicalGaussian::new(prec, lin))
}

pub fn step_gamma(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    let cond = gamma_conditional(state, ctx)?;
    state.gamma = cond.sample(&mut ctx.rng, "gamma")?;
    state.lambda_gamma = lambda_gamma_conditional(state, ctx).sample(&mut ctx.rng)?;
    Ok(())
}

// ---- step 2 ----

/// Residual of site `i`'s y data with random-effect factor `l` removed.
fn y_residual_without_factor(state: &ModelState, ctx: &GibbsContext, i: usize, l: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let site = &ctx.sites[i];
    let g = &site.v_y * state.phi.column(l);
    let r = &site.y - ctx.fitted_y(state, i)? + &g * state.theta[(l, i)];
    Ok((g, r))
}

pub fn theta_conditional(state: &ModelState, ctx: &GibbsContext, l: usize) -> Result<CanonicalGaussian> {
    let w = 1.0 / state.sigma2_eps_y;
    let mut prec = &ctx.car_precision / state.sigma2_theta[l];
    let mut lin = DVector::zeros(ctx.n());
    for i in 0..ctx.n() {
        if ctx.sites[i].y.is_empty() {
            continue;
        }
        let (g, r) = y_residual_without_factor(state, ctx, i, l)?;
        prec[(i, i)] += w * g.norm_squared();
        lin[i] = w * g.dot(&r);
    }
    Ok(CanonicalGaussian::new(prec, lin))
}

pub fn step_theta(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    for l in 0..state.l() {
        let cond = theta_conditional(state, ctx, l)?;
        let draw = cond.sample(&mut ctx.rng, "theta")?;
        state.theta.set_row(l, &draw.transpose());
    }
    Ok(())
}

// ---- step 3 ----

pub fn lambda_g_conditional(state: &ModelState, ctx: &GibbsContext, l: usize) -> GammaConditional {
    lambda_conditional(&ctx.bases.loading_theta, &state.phi.column(l).into_owned(), &ctx.hp)
}

/// Unconstrained Gaussian conditional of `φ_l`; the draw is further
/// conditioned on `Φ_{-l}' φ_l = 0`.
pub fn phi_conditional(state: &ModelState, ctx: &GibbsContext, l: usize) -> Result<CanonicalGaussian> {
    let basis = &ctx.bases.loading_theta;
    let w = 1.0 / state.sigma2_eps_y;
    let mut prec = basis.prior_precision(state.lambda_g[l], ctx.hp.null_precision);
    let mut lin = DVector::zeros(basis.dim());
    for i in 0..ctx.n() {
        let site = &ctx.sites[i];
        let th = state.theta[(l, i)];
        if site.y.is_empty() || th == 0.0 {
            continue;
        }
        let (_, r) = y_residual_without_factor(state, ctx, i, l)?;
        prec += &site.v_y_gram * (w * th * th);
        lin += site.v_y.tr_mul(&r) * (w * th);
    }
    Ok(CanonicalGaussian::new(prec, lin))
}

pub fn phi_constraint(state: &ModelState, l: usize) -> DMatrix<f64> {
    all_but(&state.phi, l)
}

pub fn step_phi(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    for l in 0..state.l() {
        let cond = phi_conditional(state, ctx, l)?;
        let draw = cond.sample_constrained(&phi_constraint(state, l), &mut ctx.rng, "phi")?;
        let norm = draw.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NonFinite("phi draw has zero norm".into()));
        }
        state.phi.set_column(l, &(draw / norm));
        state.theta.row_mut(l).scale_mut(norm);
        state.lambda_g[l] = lambda_g_conditional(state, ctx, l).sample(&mut ctx.rng)?;
    }
    Ok(())
}

// ---- step 4 ----

/// `log z_s = -SS_s / (2 σ²_εy)` for every candidate lag `s`.
pub fn lag_log_weights(state: &ModelState, ctx: &GibbsContext) -> Result<Vec<f64>> {
    let grid = ctx.data.grid;
    let max_lag = ctx.hp.max_lag;
    let mut ss = vec![0.0; max_lag + 1];
    for i in 0..ctx.n() {
        let site = &ctx.sites[i];
        if site.y.is_empty() {
            continue;
        }
        let xe = ctx.x_extended(state, i);
        let base = &site.y - ctx.theta_at_y(state, i);
        let gy = ctx.gamma_at_y(state, i);
        for (s, acc) in ss.iter_mut().enumerate() {
            for (r, &t) in site.y_times.iter().enumerate() {
                let e = grid.extended_index(t, s)?;
                *acc += (base[r] - gy[r] * xe[e]).powi(2);
            }
        }
    }
    let w = 0.5 / state.sigma2_eps_y;
    Ok(ss.into_iter().map(|v| -w * v).collect())
}

pub fn step_lag(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    let logw = lag_log_weights(state, ctx)?;
    state.lag = super::dist::gumbel_max(&logw, &mut ctx.rng)?;
    ctx.refresh_lag(state.lag)
}

// ---- step 5 ----

/// Factor `k`'s contribution at site `i` per unit of `β_{k,i}`, on the x
/// days and (multiplied by γ) on the lagged y days, with the residuals of
/// both likelihoods.
struct FactorPieces {
    fx: DVector<f64>,
    fy: DVector<f64>,
    ex: DVector<f64>,
    ey: DVector<f64>,
}

fn factor_pieces(state: &ModelState, ctx: &GibbsContext, k: usize, i: usize) -> Result<FactorPieces> {
    let site = &ctx.sites[i];
    let psi_k = state.psi.column(k);
    let fx = &site.w_x * psi_k;
    let fy = if site.y.is_empty() {
        DVector::zeros(0)
    } else {
        (ctx.w_y(i, state.lag)?.as_ref() * psi_k).component_mul(&ctx.gamma_at_y(state, i))
    };
    let ex = &site.x - ctx.x_at_x(state, i);
    let ey = &site.y - ctx.fitted_y(state, i)?;
    Ok(FactorPieces { fx, fy, ex, ey })
}

pub fn mu_conditional(state: &ModelState, ctx: &GibbsContext, k: usize) -> Result<ScalarGaussian> {
    let (wx, wy) = (1.0 / state.sigma2_eps_x, 1.0 / state.sigma2_eps_y);
    let mut g = ScalarGaussian { precision: state.precision_mu()[k], linear: 0.0 };
    let m = state.mu[k];
    for i in 0..ctx.n() {
        let p = factor_pieces(state, ctx, k, i)?;
        // residual with μ_k removed: e + f μ_k
        g.precision += wx * p.fx.norm_squared() + wy * p.fy.norm_squared();
        g.linear += wx * p.fx.dot(&(&p.ex + &p.fx * m)) + wy * p.fy.dot(&(&p.ey + &p.fy * m));
    }
    Ok(g)
}

pub fn alpha_conditional(state: &ModelState, ctx: &GibbsContext, k: usize, i: usize) -> Result<ScalarGaussian> {
    let (wx, wy) = (1.0 / state.sigma2_eps_x, 1.0 / state.sigma2_eps_y);
    let p = factor_pieces(state, ctx, k, i)?;
    let a = state.alpha[(k, i)];
    Ok(ScalarGaussian {
        precision: state.precision_alpha()[k] * state.zeta[(k, i)] + wx * p.fx.norm_squared() + wy * p.fy.norm_squared(),
        linear: wx * p.fx.dot(&(&p.ex + &p.fx * a)) + wy * p.fy.dot(&(&p.ey + &p.fy * a)),
    })
}

/// All `μ_k`, then all `α_{k,i}`.
pub fn step_factors(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    for k in 0..state.k() {
        state.mu[k] = mu_conditional(state, ctx, k)?.sample(&mut ctx.rng, "mu")?;
    }
    for k in 0..state.k() {
        for i in 0..state.n() {
            state.alpha[(k, i)] = alpha_conditional(state, ctx, k, i)?.sample(&mut ctx.rng, "alpha")?;
        }
    }
    Ok(())
}

// ---- step 6 ----

pub fn lambda_f_conditional(state: &ModelState, ctx: &GibbsContext, k: usize) -> GammaConditional {
    lambda_conditional(&ctx.bases.loading_x, &state.psi.column(k).into_owned(), &ctx.hp)
}

/// `(diag(γ) W_i^Δ)` for every site: the y-side design of the loading
/// coefficients. Fixed throughout step 6.
pub fn psi_y_designs(state: &ModelState, ctx: &GibbsContext) -> Result<Vec<DMatrix<f64>>> {
    (0..ctx.n())
        .map(|i| Ok(scale_rows(ctx.w_y(i, state.lag)?.as_ref(), &ctx.gamma_at_y(state, i))))
        .collect()
}

/// Unconstrained Gaussian conditional of `ψ_k`; the draw is further
/// conditioned on `Ψ_{-k}' ψ_k = 0`.
pub fn psi_conditional(state: &ModelState, ctx: &GibbsContext, k: usize) -> Result<CanonicalGaussian> {
    let designs = psi_y_designs(state, ctx)?;
    let grams: Vec<DMatrix<f64>> = designs.iter().map(|d| d.tr_mul(d)).collect();
    psi_conditional_with(state, ctx, k, &designs, &grams)
}

fn psi_conditional_with(
    state: &ModelState,
    ctx: &GibbsContext,
    k: usize,
    designs: &[DMatrix<f64>],
    grams: &[DMatrix<f64>],
) -> Result<CanonicalGaussian> {
    let basis = &ctx.bases.loading_x;
    let (wx, wy) = (1.0 / state.sigma2_eps_x, 1.0 / state.sigma2_eps_y);
    let mut prec = basis.prior_precision(state.lambda_f[k], ctx.hp.null_precision);
    let mut lin = DVector::zeros(basis.dim());
    let psi_k = state.psi.column(k);
    for i in 0..ctx.n() {
        let b = state.mu[k] + state.alpha[(k, i)];
        if b == 0.0 {
            continue;
        }
        let site = &ctx.sites[i];
        let rx = &site.x - ctx.x_at_x(state, i) + (&site.w_x * psi_k) * b;
        prec += &site.w_x_gram * (wx * b * b);
        lin += site.w_x.tr_mul(&rx) * (wx * b);
        if !site.y.is_empty() {
            let ry = &site.y - ctx.fitted_y(state, i)? + (&designs[i] * psi_k) * b;
            prec += &grams[i] * (wy * b * b);
            lin += designs[i].tr_mul(&ry) * (wy * b);
        }
    }
    Ok(CanonicalGaussian::new(prec, lin))
}

pub fn psi_constraint(state: &ModelState, k: usize) -> DMatrix<f64> {
    all_but(&state.psi, k)
}

pub fn step_psi(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    let designs = psi_y_designs(state, ctx)?;
    let grams: Vec<DMatrix<f64>> = designs.iter().map(|d| d.tr_mul(d)).collect();
    for k in 0..state.k() {
        let cond = psi_conditional_with(state, ctx, k, &designs, &grams)?;
        let draw = cond.sample_constrained(&psi_constraint(state, k), &mut ctx.rng, "psi")?;
        let norm = draw.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NonFinite("psi draw has zero norm".into()));
        }
        state.psi.set_column(k, &(draw / norm));
        state.mu[k] *= norm;
        state.alpha.row_mut(k).scale_mut(norm);
        state.lambda_f[k] = lambda_f_conditional(state, ctx, k).sample(&mut ctx.rng)?;
    }
    Ok(())
}

// ---- step 7 ----

fn mgp_shape(first: f64, rest: f64, h: usize) -> f64 {
    if h == 0 {
        first
    } else {
        rest
    }
}

pub fn delta_mu_conditional(state: &ModelState, h: usize) -> GammaConditional {
    let tau = state.precision_mu();
    let k = state.k();
    let rate = 1.0
        + 0.5 * (h..k).map(|j| tau[j] / state.delta_mu[h] * state.mu[j].powi(2)).sum::<f64>();
    let shape = mgp_shape(state.a_mu1, state.a_mu2, h) + 0.5 * (k - h) as f64;
    GammaConditional::new(shape, rate)
}

pub fn delta_alpha_conditional(state: &ModelState, h: usize) -> GammaConditional {
    let tau = state.precision_alpha();
    let (k, n) = (state.k(), state.n());
    let rate = 1.0
        + 0.5
            * (h..k)
                .map(|j| {
                    let s: f64 = (0..n).map(|i| state.zeta[(j, i)] * state.alpha[(j, i)].powi(2)).sum();
                    tau[j] / state.delta_alpha[h] * s
                })
                .sum::<f64>();
    let shape = mgp_shape(state.a_alpha1, state.a_alpha2, h) + 0.5 * (n * (k - h)) as f64;
    GammaConditional::new(shape, rate)
}

pub fn zeta_conditional(state: &ModelState, k: usize, i: usize) -> GammaConditional {
    let tau = state.precision_alpha()[k];
    GammaConditional::new(0.5 * state.nu_alpha + 0.5, 0.5 * state.nu_alpha + 0.5 * tau * state.alpha[(k, i)].powi(2))
}

pub fn step_mgp(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    for h in 0..state.k() {
        state.delta_mu[h] = delta_mu_conditional(state, h).sample(&mut ctx.rng)?;
    }
    for h in 0..state.k() {
        state.delta_alpha[h] = delta_alpha_conditional(state, h).sample(&mut ctx.rng)?;
    }
    for k in 0..state.k() {
        for i in 0..state.n() {
            state.zeta[(k, i)] = zeta_conditional(state, k, i).sample(&mut ctx.rng)?;
        }
    }
    Ok(())
}

// ---- step 8 ----

/// Conditional of `σ⁻²_εx`.
pub fn noise_x_conditional(state: &ModelState, ctx: &GibbsContext) -> Result<GammaConditional> {
    let (_, ssx) = ctx.residual_sums(state)?;
    Ok(GammaConditional::new(ctx.hp.a_eps_x + 0.5 * ctx.total_x() as f64, ctx.hp.b_eps_x + 0.5 * ssx))
}

/// Conditional of `σ⁻²_εy`.
pub fn noise_y_conditional(state: &ModelState, ctx: &GibbsContext) -> Result<GammaConditional> {
    let (ssy, _) = ctx.residual_sums(state)?;
    Ok(GammaConditional::new(ctx.hp.a_eps_y + 0.5 * ctx.total_y() as f64, ctx.hp.b_eps_y + 0.5 * ssy))
}

/// Conditional of `σ⁻²_θl`.
pub fn sigma_theta_conditional(state: &ModelState, ctx: &GibbsContext, l: usize) -> GammaConditional {
    let th = state.theta.row(l).transpose();
    let quad = (&ctx.car_precision * &th).dot(&th);
    GammaConditional::new(ctx.hp.a_theta + 0.5 * ctx.n() as f64, ctx.hp.b_theta + 0.5 * quad)
}

pub fn step_variances(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    state.sigma2_eps_x = 1.0 / noise_x_conditional(state, ctx)?.sample(&mut ctx.rng)?;
    state.sigma2_eps_y = 1.0 / noise_y_conditional(state, ctx)?.sample(&mut ctx.rng)?;
    for l in 0..state.l() {
        state.sigma2_theta[l] = 1.0 / sigma_theta_conditional(state, ctx, l).sample(&mut ctx.rng)?;
    }
    Ok(())
}

// ---- step 9 ----

/// Which MGP shape parameter a slice target refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeParam {
    Mu1,
    Mu2,
    Alpha1,
    Alpha2,
}

/// Unnormalized log conditional of one MGP shape parameter at `a`.
pub fn shape_log_target(state: &ModelState, hp: &Hyperparams, which: ShapeParam, a: f64) -> f64 {
    let prior = ln_gamma_pdf(a, hp.a_prior_shape, hp.a_prior_rate);
    let (deltas, first) = match which {
        ShapeParam::Mu1 => (&state.delta_mu, true),
        ShapeParam::Mu2 => (&state.delta_mu, false),
        ShapeParam::Alpha1 => (&state.delta_alpha, true),
        ShapeParam::Alpha2 => (&state.delta_alpha, false),
    };
    let lik: f64 = if first {
        ln_gamma_pdf(deltas[0], a, 1.0)
    } else {
        deltas.iter().skip(1).map(|&d| ln_gamma_pdf(d, a, 1.0)).sum()
    };
    prior + lik
}

/// Unnormalized log conditional of `ν_α`.
pub fn nu_log_target(state: &ModelState, hp: &Hyperparams, nu: f64) -> f64 {
    if !(nu >= hp.nu_lower && nu <= hp.nu_upper) {
        return f64::NEG_INFINITY;
    }
    state.zeta.iter().map(|&z| ln_gamma_pdf(z, 0.5 * nu, 0.5 * nu)).sum()
}

pub fn step_slice(state: &mut ModelState, ctx: &mut GibbsContext) -> Result<()> {
    let hp = ctx.hp.clone();
    let s = &hp.slice;
    for which in [ShapeParam::Mu1, ShapeParam::Mu2, ShapeParam::Alpha1, ShapeParam::Alpha2] {
        let current = match which {
            ShapeParam::Mu1 => state.a_mu1,
            ShapeParam::Mu2 => state.a_mu2,
            ShapeParam::Alpha1 => state.a_alpha1,
            ShapeParam::Alpha2 => state.a_alpha2,
        };
        let snapshot = &*state;
        let next = slice_sample(
            |a| shape_log_target(snapshot, &hp, which, a),
            current,
            0.0,
            f64::INFINITY,
            s.width_shape,
            s.max_steps,
            &mut ctx.rng,
        )?;
        match which {
            ShapeParam::Mu1 => state.a_mu1 = next,
            ShapeParam::Mu2 => state.a_mu2 = next,
            ShapeParam::Alpha1 => state.a_alpha1 = next,
            ShapeParam::Alpha2 => state.a_alpha2 = next,
        }
    }
    let snapshot = &*state;
    state.nu_alpha = slice_sample(
        |v| nu_log_target(snapshot, &hp, v),
        state.nu_alpha,
        hp.nu_lower,
        hp.nu_upper,
        s.width_nu,
        s.max_steps,
        &mut ctx.rng,
    )?;
    Ok(())
}
