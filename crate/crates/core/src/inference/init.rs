use nalgebra::{DMatrix, DVector};

use crate::linalg::sym_eigen_sorted;
use crate::model::{Dataset, Hyperparams, ModelBases, ModelState, SiteSeries};

/// Linear interpolation of one series onto grid days `0..len`, constant
/// beyond the first and last observation.
pub fn interpolate(series: &SiteSeries, len: usize) -> DVector<f64> {
    let (t, v) = (&series.times, &series.values);
    DVector::from_fn(len, |day, _| {
        if t.is_empty() {
            return 0.0;
        }
        match t.binary_search(&day) {
            Ok(j) => v[j],
            Err(0) => v[0],
            Err(j) if j == t.len() => v[t.len() - 1],
            Err(j) => {
                let (t0, t1) = (t[j - 1] as f64, t[j] as f64);
                let w = (day as f64 - t0) / (t1 - t0);
                v[j - 1] * (1.0 - w) + v[j] * w
            }
        }
    })
}

fn variance(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Deterministic starting state: X-side factors from a truncated SVD of the
/// interpolated wastewater matrix, γ = 0, θ = 0, Δ = 0, variances from
/// residual moments, unit MGP and smoothing parameters.
pub fn initial_state(data: &Dataset, hp: &Hyperparams, bases: &ModelBases) -> ModelState {
    let (n, k, l) = (data.n_sites(), hp.k_factors, hp.l_factors);
    let grid = data.grid;
    let ext = grid.extension;
    let mut raw = DMatrix::zeros(grid.extended_len(), n);
    for i in 0..n {
        let col = interpolate(&data.x[i], grid.len);
        for e in 0..grid.extended_len() {
            raw[(e, i)] = col[e.saturating_sub(ext)];
        }
    }
    let coef = bases.loading_x.eval().tr_mul(&raw);
    let (_, vecs) = sym_eigen_sorted(&(&coef * coef.transpose()));
    let h = vecs.ncols();
    let mut psi = DMatrix::zeros(h, k);
    for c in 0..k {
        let mut col = vecs.column(h - 1 - c).into_owned();
        if col.sum() < 0.0 {
            col = -col;
        }
        psi.set_column(c, &col);
    }
    let beta = psi.tr_mul(&coef);
    let mu = DVector::from_iterator(k, beta.row_iter().map(|r| r.mean()));
    let mut alpha = beta.clone();
    for (c, mut row) in alpha.row_iter_mut().enumerate() {
        row.add_scalar_mut(-mu[c]);
    }

    // residual moments of x about the factor fit, and of y about zero
    let fit = bases.loading_x.eval() * &psi * &beta;
    let mut resid = Vec::new();
    for i in 0..n {
        for (&t, &v) in data.x[i].times.iter().zip(&data.x[i].values) {
            resid.push(v - fit[(ext + t, i)]);
        }
    }
    let var_x_total = variance(data.x.iter().flat_map(|s| s.values.iter().copied()));
    let sigma2_eps_x = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len().max(1) as f64)
        .max(1e-4 * var_x_total)
        .max(1e-8);
    let var_y = variance(data.y.iter().flat_map(|s| s.values.iter().copied()));
    let sigma2_eps_y = var_y.max(1e-6);

    let phi = DMatrix::identity(hp.j_dr, l);
    ModelState {
        lag: 0,
        gamma: DVector::zeros(hp.p_gamma),
        theta: DMatrix::zeros(l, n),
        phi,
        mu,
        alpha,
        psi,
        sigma2_eps_x,
        sigma2_eps_y,
        sigma2_theta: DVector::from_element(l, sigma2_eps_y),
        lambda_gamma: 1.0,
        lambda_f: DVector::from_element(k, 1.0),
        lambda_g: DVector::from_element(l, 1.0),
        delta_mu: DVector::from_element(k, 1.0),
        delta_alpha: DVector::from_element(k, 1.0),
        zeta: DMatrix::from_element(k, n, 1.0),
        nu_alpha: 10.0_f64.clamp(hp.nu_lower, hp.nu_upper),
        a_mu1: hp.a_prior_shape / hp.a_prior_rate,
        a_mu2: hp.a_prior_shape / hp.a_prior_rate,
        a_alpha1: hp.a_prior_shape / hp.a_prior_rate,
        a_alpha2: hp.a_prior_shape / hp.a_prior_rate,
    }
}
