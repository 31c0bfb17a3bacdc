use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::basis::{evaluate_subset, BasisKind, BasisSystem};
use crate::linalg::CanonicalGaussian;
use crate::model::test_support::{problem_with, small_hp, small_problem, Problem};
use crate::model::{log_joint, Hyperparams, ModelBases, ModelState, PenalizedBasis, SiteSeries};
use crate::spatial::SpatialGraph;

fn context(p: &Problem, seed: u64) -> GibbsContext {
    GibbsContext::seeded(p.sim.data.clone(), p.hp.clone(), Arc::new(p.bases.clone()), Arc::new(p.graph.clone()), seed, 0)
        .unwrap()
}

fn joint(state: &ModelState, ctx: &GibbsContext) -> f64 {
    log_joint(state, &ctx.data, &ctx.hp, &ctx.bases, &ctx.graph).unwrap()
}

/// Largest deviation from a constant of `joint - conditional` over 21 grid
/// points between `lo` and `hi`.
fn grid_deviation(lo: f64, hi: f64, mut diff: impl FnMut(f64) -> f64) -> f64 {
    let vals: Vec<f64> = (0..21).map(|j| diff(lo + (hi - lo) * j as f64 / 20.0)).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
}

const GRID_TOL: f64 = 1e-6;

fn gaussian_coordinate_check(
    state: &ModelState,
    ctx: &GibbsContext,
    cond: &CanonicalGaussian,
    current: &DVector<f64>,
    j: usize,
    set: impl Fn(&mut ModelState, &DVector<f64>),
) -> f64 {
    let sd = cond.precision[(j, j)].powf(-0.5);
    let c = current[j];
    grid_deviation(c - 3.0 * sd, c + 3.0 * sd, |v| {
        let mut coef = current.clone();
        coef[j] = v;
        let mut s = state.clone();
        set(&mut s, &coef);
        joint(&s, ctx) - cond.log_kernel(&coef)
    })
}

fn gamma_param_check(
    state: &ModelState,
    ctx: &GibbsContext,
    cond: &GammaConditional,
    current: f64,
    set: impl Fn(&mut ModelState, f64),
) -> f64 {
    let lo = (0.5 * current).max(cond.lower * 1.0001);
    grid_deviation(lo, 2.0 * current.max(lo), |v| {
        let mut s = state.clone();
        set(&mut s, v);
        joint(&s, ctx) - cond.log_kernel(v)
    })
}

#[test]
fn grid_gamma_block() {
    let p = small_problem(21);
    let ctx = context(&p, 0);
    let s = &p.sim.truth;
    let cond = gamma_conditional(s, &ctx).unwrap();
    for j in 0..s.gamma.len() {
        let dev = gaussian_coordinate_check(s, &ctx, &cond, &s.gamma, j, |st, c| st.gamma = c.clone());
        assert!(dev < GRID_TOL, "gamma[{j}] deviation {dev}");
    }
    let lc = lambda_gamma_conditional(s, &ctx);
    let dev = gamma_param_check(s, &ctx, &lc, s.lambda_gamma, |st, v| st.lambda_gamma = v);
    assert!(dev < GRID_TOL, "lambda_gamma deviation {dev}");
}

#[test]
fn grid_theta_and_sigma_theta() {
    let p = problem_with(Hyperparams { l_factors: 2, ..small_hp() }, 5, 40, 22);
    let ctx = context(&p, 0);
    let s = &p.sim.truth;
    for l in 0..2 {
        let cond = theta_conditional(s, &ctx, l).unwrap();
        let cur = s.theta.row(l).transpose();
        for i in 0..5 {
            let dev = gaussian_coordinate_check(s, &ctx, &cond, &cur, i, |st, c| st.theta.set_row(l, &c.transpose()));
            assert!(dev < GRID_TOL, "theta[{l},{i}] deviation {dev}");
        }
        let gc = sigma_theta_conditional(s, &ctx, l);
        let dev = gamma_param_check(s, &ctx, &gc, 1.0 / s.sigma2_theta[l], |st, v| st.sigma2_theta[l] = 1.0 / v);
        assert!(dev < GRID_TOL, "sigma_theta[{l}] deviation {dev}");
    }
}

#[test]
fn grid_phi_block() {
    let p = problem_with(Hyperparams { l_factors: 2, ..small_hp() }, 4, 40, 23);
    let ctx = context(&p, 0);
    let s = &p.sim.truth;
    for l in 0..2 {
        let cond = phi_conditional(s, &ctx, l).unwrap();
        let cur = s.phi.column(l).into_owned();
        for j in 0..cur.len() {
            let dev = gaussian_coordinate_check(s, &ctx, &cond, &cur, j, |st, c| st.phi.set_column(l, c));
            assert!(dev < GRID_TOL, "phi[{j},{l}] deviation {dev}");
        }
        let lc = lambda_g_conditional(s, &ctx, l);
        let dev = gamma_param_check(s, &ctx, &lc, s.lambda_g[l], |st, v| st.lambda_g[l] = v);
        assert!(dev < GRID_TOL, "lambda_g[{l}] deviation {dev}");
    }
}

#[test]
fn grid_lag() {
    let p = small_problem(24);
    let ctx = context(&p, 0);
    let s = &p.sim.truth;
    let w = lag_log_weights(s, &ctx).unwrap();
    let vals: Vec<f64> = (0..=5)
        .map(|lag| {
            let mut st = s.clone();
            st.lag = lag;
            joint(&st, &ctx) - w[lag]
        })
        .collect();
    let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < GRID_TOL, "lag spread {spread}");
}

#[test]
fn grid_factor_scores() {
    let p = small_problem(25);
    let mut ctx = context(&p, 0);
    let s = &p.sim.truth;
    // both the cached and the recomputed lag blocks
    for refresh in [false, true] {
        if refresh {
            ctx.refresh_lag(s.lag).unwrap();
        }
        for k in 0..2 {
            let g = mu_conditional(s, &ctx, k).unwrap();
            let sd = g.precision.powf(-0.5);
            let dev = grid_deviation(s.mu[k] - 3.0 * sd, s.mu[k] + 3.0 * sd, |v| {
                let mut st = s.clone();
                st.mu[k] = v;
                joint(&st, &ctx) - g.log_kernel(v)
            });
            assert!(dev < GRID_TOL, "mu[{k}] deviation {dev}");
            for i in 0..4 {
                let g = alpha_conditional(s, &ctx, k, i).unwrap();
                let sd = g.precision.powf(-0.5);
                let a = s.alpha[(k, i)];
                let dev = grid_deviation(a - 3.0 * sd, a + 3.0 * sd, |v| {
                    let mut st = s.clone();
                    st.alpha[(k, i)] = v;
                    joint(&st, &ctx) - g.log_kernel(v)
                });
                assert!(dev < GRID_TOL, "alpha[{k},{i}] deviation {dev}");
            }
        }
    }
}

#[test]
fn grid_psi_block() {
    let p = small_problem(26);
    let ctx = context(&p, 0);
    let s = &p.sim.truth;
    for k in 0..2 {
        let cond = psi_conditional(s, &ctx, k).unwrap();
        let cur = s.psi.column(k).into_owned();
        for j in 0..cur.len() {
            let dev = gaussian_coordinate_check(s, &ctx, &cond, &cur, j, |st, c| st.psi.set_column(k, c));
            assert!(dev < GRID_TOL, "psi[{j},{k}] deviation {dev}");
        }
        // along a direction inside the constraint subspace
        let c = psi_constraint(s, k);
        let raw = DVector::from_fn(cur.len(), |j, _| ((j * 7 + 3) % 5) as f64 - 2.0);
        let dir = &raw - c.transpose() * (&c * &raw);
        let dir = dir.normalize();
        let dev = grid_deviation(-0.3, 0.3, |t| {
            let coef = &cur + &dir * t;
            let mut st = s.clone();
            st.psi.set_column(k, &coef);
            joint(&st, &ctx) - cond.log_kernel(&coef)
        });
        assert!(dev < GRID_TOL, "psi[{k}] constrained direction deviation {dev}");
        let lc = lambda_f_conditional(s, &ctx, k);
        let dev = gamma_param_check(s, &ctx, &lc, s.lambda_f[k], |st, v| st.lambda_f[k] = v);
        assert!(dev < GRID_TOL, "lambda_f[{k}] deviation {dev}");
    }
}

#[test]
fn grid_mgp() {
    let p = problem_with(Hyperparams { k_factors: 3, ..small_hp() }, 4, 40, 27);
    let ctx = context(&p, 0);
    let mut s = p.sim.truth.clone();
    s.delta_mu = DVector::from_vec(vec![0.5, 1.5, 2.0]);
    s.delta_alpha = DVector::from_vec(vec![1.2, 0.8, 3.0]);
    s.zeta.iter_mut().enumerate().for_each(|(j, z)| *z = 0.5 + 0.1 * j as f64);
    for h in 0..3 {
        let g = delta_mu_conditional(&s, h);
        let dev = gamma_param_check(&s, &ctx, &g, s.delta_mu[h], |st, v| st.delta_mu[h] = v);
        assert!(dev < GRID_TOL, "delta_mu[{h}] deviation {dev}");
        let g = delta_alpha_conditional(&s, h);
        let dev = gamma_param_check(&s, &ctx, &g, s.delta_alpha[h], |st, v| st.delta_alpha[h] = v);
        assert!(dev < GRID_TOL, "delta_alpha[{h}] deviation {dev}");
        for i in 0..4 {
            let g = zeta_conditional(&s, h, i);
            let dev = gamma_param_check(&s, &ctx, &g, s.zeta[(h, i)], |st, v| st.zeta[(h, i)] = v);
            assert!(dev < GRID_TOL, "zeta[{h},{i}] deviation {dev}");
        }
    }
}

#[test]
fn grid_noise_precisions() {
    let p = small_problem(28);
    let ctx = context(&p, 0);
    let s = &p.sim.truth;
    let g = noise_x_conditional(s, &ctx).unwrap();
    let dev = gamma_param_check(s, &ctx, &g, 1.0 / s.sigma2_eps_x, |st, v| st.sigma2_eps_x = 1.0 / v);
    assert!(dev < GRID_TOL, "sigma_eps_x deviation {dev}");
    let g = noise_y_conditional(s, &ctx).unwrap();
    let dev = gamma_param_check(s, &ctx, &g, 1.0 / s.sigma2_eps_y, |st, v| st.sigma2_eps_y = 1.0 / v);
    assert!(dev < GRID_TOL, "sigma_eps_y deviation {dev}");
}

#[test]
fn grid_slice_targets() {
    let p = small_problem(29);
    let ctx = context(&p, 0);
    let mut s = p.sim.truth.clone();
    s.delta_mu = DVector::from_vec(vec![0.7, 1.9]);
    s.delta_alpha = DVector::from_vec(vec![1.1, 2.5]);
    s.zeta.iter_mut().enumerate().for_each(|(j, z)| *z = 0.6 + 0.2 * j as f64);
    let params: [(ShapeParam, fn(&mut ModelState, f64)); 4] = [
        (ShapeParam::Mu1, |st, v| st.a_mu1 = v),
        (ShapeParam::Mu2, |st, v| st.a_mu2 = v),
        (ShapeParam::Alpha1, |st, v| st.a_alpha1 = v),
        (ShapeParam::Alpha2, |st, v| st.a_alpha2 = v),
    ];
    for (which, set) in params {
        let dev = grid_deviation(0.5, 6.0, |a| {
            let mut st = s.clone();
            set(&mut st, a);
            joint(&st, &ctx) - shape_log_target(&s, &ctx.hp, which, a)
        });
        assert!(dev < GRID_TOL, "{which:?} deviation {dev}");
    }
    let dev = grid_deviation(2.0, 128.0, |nu| {
        let mut st = s.clone();
        st.nu_alpha = nu;
        joint(&st, &ctx) - nu_log_target(&s, &ctx.hp, nu)
    });
    assert!(dev < GRID_TOL, "nu deviation {dev}");
}

#[test]
fn cached_blocks_match_recomputation() {
    let p = small_problem(30);
    let mut ctx = context(&p, 0);
    for lag in [0, 3, 5] {
        ctx.refresh_lag(lag).unwrap();
        for i in 0..4 {
            let rows: Vec<usize> = p.sim.data.y[i].times.iter().map(|t| 5 + t - lag).collect();
            let direct = evaluate_subset(&p.bases.loading_x.system, &rows).unwrap();
            assert!((ctx.w_y(i, lag).unwrap().as_ref() - &direct).abs().max() < 1e-12);
            let direct_b = evaluate_subset(&p.bases.gamma.system, &p.sim.data.y[i].times).unwrap();
            assert!((&ctx.sites[i].b_y - direct_b).abs().max() < 1e-12);
        }
    }
}

fn without_y(p: &Problem) -> Problem {
    let mut data = p.sim.data.clone();
    data.y.iter_mut().for_each(|s| *s = SiteSeries::default());
    let mut sim = p.sim.clone();
    sim.data = data;
    Problem { sim, hp: p.hp.clone(), bases: p.bases.clone(), graph: p.graph.clone() }
}

#[test]
fn gamma_without_y_is_prior() {
    let p = without_y(&small_problem(31));
    let ctx = context(&p, 0);
    let s = &p.sim.truth;
    let cond = gamma_conditional(s, &ctx).unwrap();
    let prior = p.bases.gamma.prior_precision(s.lambda_gamma, p.hp.null_precision);
    assert!((cond.precision - prior).abs().max() < 1e-14);
    assert_eq!(cond.linear.norm(), 0.0);
    let th = theta_conditional(s, &ctx, 0).unwrap();
    assert!((th.precision - p.graph.precision() / s.sigma2_theta[0]).abs().max() < 1e-12);
}

#[test]
fn gamma_scalar_least_squares_limit() {
    let p = small_problem(32);
    let mut bases = p.bases.clone();
    let m = p.sim.data.grid.len;
    bases.gamma = PenalizedBasis::new(BasisSystem {
        kind: BasisKind::BsplinePenalized,
        eval: DMatrix::from_element(m, 1, 1.0),
        penalty: DMatrix::zeros(1, 1),
    });
    let hp = Hyperparams { p_gamma: 1, ..p.hp.clone() };
    let ctx = GibbsContext::seeded(p.sim.data.clone(), hp, Arc::new(bases), Arc::new(p.graph.clone()), 0, 0).unwrap();
    let mut s = p.sim.truth.clone();
    s.gamma = DVector::from_element(1, 0.0);
    s.theta.fill(0.0);
    s.sigma2_eps_y = 1e-12;
    let mean = gamma_conditional(&s, &ctx).unwrap().mean("gamma").unwrap()[0];
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..4 {
        let xy = ctx.x_at_y(&s, i).unwrap();
        num += xy.dot(&ctx.sites[i].y);
        den += xy.norm_squared();
    }
    assert!((mean - num / den).abs() < 1e-9 * (num / den).abs());
}

#[test]
fn gamma_draw_moments() {
    let p = small_problem(33);
    let mut ctx = context(&p, 7);
    let s = p.sim.truth.clone();
    let cond = gamma_conditional(&s, &ctx).unwrap();
    let mean = cond.mean("gamma").unwrap();
    let cov = cond.precision.clone().try_inverse().unwrap();
    let n = 100_000;
    let d = mean.len();
    let mut m1 = DVector::zeros(d);
    let mut m2 = DMatrix::zeros(d, d);
    for _ in 0..n {
        let x = cond.sample(&mut ctx.rng, "gamma").unwrap() - &mean;
        m1 += &x;
        m2 += &x * x.transpose();
    }
    m1 /= n as f64;
    m2 /= n as f64;
    for j in 0..d {
        let se = (cov[(j, j)] / n as f64).sqrt();
        assert!(m1[j].abs() < 4.0 * se, "mean[{j}] off by {} (se {se})", m1[j]);
        for k in 0..d {
            // sd of a sample covariance entry ~ sqrt((S_jj S_kk + S_jk²) / n)
            let se = ((cov[(j, j)] * cov[(k, k)] + cov[(j, k)].powi(2)) / n as f64).sqrt();
            assert!((m2[(j, k)] - cov[(j, k)]).abs() < 5.0 * se, "cov[{j},{k}]");
        }
    }
}

#[test]
fn theta_two_node_symbolic() {
    let p = problem_with(small_hp(), 2, 40, 34);
    let mut data = p.sim.data.clone();
    for i in 0..2 {
        let (t, v) = (data.y[i].times[2 + i], data.y[i].values[2 + i]);
        data.y[i] = SiteSeries::new(vec![t], vec![v]);
    }
    let graph = SpatialGraph::from_adjacency(
        vec!["a".into(), "b".into()],
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        0.05,
    )
    .unwrap();
    let ctx = GibbsContext::seeded(data.clone(), p.hp.clone(), Arc::new(p.bases.clone()), Arc::new(graph), 0, 0).unwrap();
    let s = &p.sim.truth;
    let cond = theta_conditional(s, &ctx, 0).unwrap();
    let mean = cond.mean("theta").unwrap();

    // hand-solved 2 x 2 system
    let w = 1.0 / s.sigma2_eps_y;
    let prior = 1.0 / s.sigma2_theta[0];
    let mut g = [0.0; 2];
    let mut r = [0.0; 2];
    let curves = crate::model::DerivedCurves::compute(s, &p.bases).unwrap();
    for i in 0..2 {
        let t = data.y[i].times[0];
        g[i] = p.bases.loading_theta.eval().row(t).dot(&s.phi.column(0).transpose());
        r[i] = data.y[i].values[0] - curves.gamma[t] * curves.x[(5 + t - s.lag, i)];
    }
    let (a11, a12, a22) = (prior * 1.05 + w * g[0] * g[0], -prior, prior * 1.05 + w * g[1] * g[1]);
    let (b1, b2) = (w * g[0] * r[0], w * g[1] * r[1]);
    let det = a11 * a22 - a12 * a12;
    let sol = [(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det];
    for i in 0..2 {
        assert!((mean[i] - sol[i]).abs() < 1e-10 * sol[i].abs().max(1.0), "{} vs {}", mean[i], sol[i]);
    }
}

#[test]
fn constrained_gaussian_toy_moments() {
    let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, -0.3, 0.1, -0.3, 1.0]);
    let l = DVector::from_vec(vec![0.4, -1.0, 0.7]);
    let cond = CanonicalGaussian::new(q.clone(), l.clone());
    let c = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
    let s = q.try_inverse().unwrap();
    let m = &s * &l;
    let sc = &s * c.transpose();
    let csc = (&c * &sc)[(0, 0)];
    let m_c = &m - &sc * ((&c * &m)[(0, 0)] / csc);
    let s_c = &s - &sc * sc.transpose() / csc;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 100_000;
    let mut m1 = DVector::zeros(3);
    let mut m2 = DMatrix::zeros(3, 3);
    for _ in 0..n {
        let x = cond.sample_constrained(&c, &mut rng, "toy").unwrap();
        assert!((&c * &x)[(0, 0)].abs() < 1e-12);
        let d = &x - &m_c;
        m1 += &d;
        m2 += &d * d.transpose();
    }
    m1 /= n as f64;
    m2 /= n as f64;
    for j in 0..3 {
        assert!(m1[j].abs() < 4.0 * (s_c[(j, j)] / n as f64).sqrt() + 1e-12);
        for k in 0..3 {
            let se = ((s_c[(j, j)] * s_c[(k, k)] + s_c[(j, k)].powi(2)) / n as f64).sqrt();
            assert!((m2[(j, k)] - s_c[(j, k)]).abs() < 5.0 * se + 1e-12);
        }
    }
}

#[test]
fn phi_single_factor_is_unconstrained_and_normalized() {
    let p = small_problem(35);
    let mut ctx = context(&p, 1);
    let mut s = p.sim.truth.clone();
    assert_eq!(phi_constraint(&s, 0).nrows(), 0);
    let g_before = &s.phi * &s.theta;
    step_phi(&mut s, &mut ctx).unwrap();
    assert!((s.phi.norm() - 1.0).abs() < 1e-12);
    assert!(g_before.iter().all(|v| v.is_finite()));
}

#[test]
fn loadings_orthonormal_after_steps() {
    let p = problem_with(Hyperparams { k_factors: 3, l_factors: 3, ..small_hp() }, 4, 40, 36);
    let mut ctx = context(&p, 2);
    let mut s = p.sim.truth.clone();
    for _ in 0..20 {
        step_phi(&mut s, &mut ctx).unwrap();
        step_psi(&mut s, &mut ctx).unwrap();
        assert!(s.orthogonality_error() < 1e-8, "{}", s.orthogonality_error());
    }
}

#[test]
fn psi_with_zero_scores_reverts_to_prior() {
    let p = small_problem(37);
    let ctx = context(&p, 0);
    let mut s = p.sim.truth.clone();
    s.mu[1] = 0.0;
    s.alpha.row_mut(1).fill(0.0);
    let cond = psi_conditional(&s, &ctx, 1).unwrap();
    let prior = p.bases.loading_x.prior_precision(s.lambda_f[1], p.hp.null_precision);
    assert!((cond.precision - prior).abs().max() < 1e-12);
    assert!(cond.linear.norm() < 1e-12);
}

#[test]
fn factor_two_observation_combination() {
    let p = problem_with(Hyperparams { k_factors: 1, ..small_hp() }, 3, 40, 38);
    let mut data = p.sim.data.clone();
    data.y[0] = SiteSeries::new(vec![10], vec![p.sim.full_y[(10, 0)]]);
    data.x[0] = SiteSeries::new(vec![14], vec![data.x[0].values[2]]);
    for i in 1..3 {
        data.y[i] = SiteSeries::default();
        data.x[i] = SiteSeries::default();
    }
    let ctx = GibbsContext::seeded(data.clone(), p.hp.clone(), Arc::new(p.bases.clone()), Arc::new(p.graph.clone()), 0, 0).unwrap();
    let s = &p.sim.truth;
    let g = mu_conditional(s, &ctx, 0).unwrap();

    // loading values at the two observation points
    let fk = p.bases.loading_x.eval() * s.psi.column(0);
    let curves = crate::model::DerivedCurves::compute(s, &p.bases).unwrap();
    let fx = fk[5 + 14];
    let fy = curves.gamma[10] * fk[5 + 10 - s.lag];
    let a = s.alpha[(0, 0)];
    // each observation alone estimates μ with a known variance
    let est_x = data.x[0].values[0] / fx - a;
    let var_x = s.sigma2_eps_x / (fx * fx);
    let est_y = (data.y[0].values[0] - curves.theta[(10, 0)]) / fy - a;
    let var_y = s.sigma2_eps_y / (fy * fy);
    let prior_prec = s.precision_mu()[0];
    let post = (est_x / var_x + est_y / var_y) / (prior_prec + 1.0 / var_x + 1.0 / var_y);
    assert!((g.mean() - post).abs() < 1e-9 * post.abs().max(1.0), "{} vs {post}", g.mean());
}

#[test]
fn mgp_zero_scores_rate() {
    let mut s = crate::model::test_support::tiny_state(2, 1, 3);
    s.mu.fill(0.0);
    let g = delta_mu_conditional(&s, 0);
    assert_eq!(g.rate, 1.0);
    assert_eq!(g.shape, s.a_mu1 + 1.0);
}

#[test]
fn variance_conditionals_degenerate_cases() {
    let p = small_problem(39);
    let ctx0 = context(&p, 0);
    let s = p.sim.truth.clone();
    // replace the observations by the fitted values
    let y: Vec<DVector<f64>> = (0..4).map(|i| ctx0.fitted_y(&s, i).unwrap()).collect();
    let x: Vec<DVector<f64>> = (0..4).map(|i| ctx0.x_at_x(&s, i)).collect();
    let mut ctx = ctx0.clone();
    ctx.set_observations(&y, &x).unwrap();
    let g = noise_x_conditional(&s, &ctx).unwrap();
    assert_eq!(g.shape, p.hp.a_eps_x + 0.5 * ctx.total_x() as f64);
    assert!((g.rate - p.hp.b_eps_x).abs() < 1e-20);

    let graph = SpatialGraph::from_adjacency(p.graph.ids.clone(), p.graph.weights.clone(), 0.0).unwrap();
    let ctx = GibbsContext::seeded(p.sim.data.clone(), p.hp.clone(), Arc::new(p.bases.clone()), Arc::new(graph), 0, 0).unwrap();
    let mut s = s;
    s.theta.fill(0.37);
    let g = sigma_theta_conditional(&s, &ctx, 0);
    assert!((g.rate - p.hp.b_theta).abs() < 1e-14);
}

#[test]
fn sweeps_preserve_invariants_and_are_deterministic() {
    let p = problem_with(Hyperparams { k_factors: 3, l_factors: 2, ..small_hp() }, 5, 40, 40);
    let run = |seed: u64| {
        let mut ctx = context(&p, seed);
        let mut s = p.sim.truth.clone();
        for _ in 0..30 {
            sweep(&mut s, &mut ctx).unwrap();
            s.validate(&p.hp, 5).unwrap();
        }
        s
    };
    let a = run(3);
    let b = run(3);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_ne!(a, run(4));
}

#[test]
fn fixed_loadings_sweep_leaves_loadings() {
    let p = small_problem(41);
    let mut ctx = context(&p, 0);
    let mut s = p.sim.truth.clone();
    sweep_with(&mut s, &mut ctx, SweepOptions { update_loadings: false }).unwrap();
    assert_eq!(s.psi, p.sim.truth.psi);
    assert_eq!(s.phi, p.sim.truth.phi);
    assert_eq!(s.lambda_f, p.sim.truth.lambda_f);
}

#[test]
fn rebuilt_bases_agree() {
    let p = small_problem(42);
    let again = ModelBases::build(&p.sim.data.grid, &p.hp).unwrap();
    assert_eq!(again.gamma.eval(), p.bases.gamma.eval());
}
