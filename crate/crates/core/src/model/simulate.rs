//! Synthetic sewershed-style data with a known ground truth.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bases::ModelBases;
use super::curves::DerivedCurves;
use super::data::{Dataset, SiteSeries};
use super::params::{Hyperparams, ModelState};
use crate::basis::Grid;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_retry, standard_normal_vec, sym_eigen_sorted};
use crate::spatial::{knn_weights, Region, SpatialConfig, SpatialGraph};

/// Which grid days receive observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Wastewater sampled on days 0, `x_every`, `2 x_every`, ...
    pub x_every: usize,
    /// Positivity sampled on days 0, `y_every`, ...
    pub y_every: usize,
    /// Fraction of the grid at the right end with no positivity data.
    pub y_tail_missing: f64,
    /// Independent drop probability for the remaining y days.
    pub y_random_missing: f64,
    /// Independent drop probability for x days (the first x day is kept).
    pub x_random_missing: f64,
    /// Sites whose positivity series is withheld entirely.
    pub withheld_sites: Vec<usize>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            x_every: 7,
            y_every: 1,
            y_tail_missing: 0.3,
            y_random_missing: 0.0,
            x_random_missing: 0.0,
            withheld_sites: Vec::new(),
        }
    }
}

impl Schedule {
    /// Every day of both series observed.
    pub fn full() -> Self {
        Self { x_every: 1, y_tail_missing: 0.0, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub hp: Hyperparams,
    pub n_sites: usize,
    pub days: usize,
    pub first_day: i64,
    /// True lag; drawn uniformly when absent.
    pub lag: Option<usize>,
    pub sd_x: f64,
    pub sd_y: f64,
    /// Baseline level of γ(τ).
    pub gamma_level: f64,
    /// Root mean square of the spatial random effects.
    pub theta_rms: f64,
    /// Side length in meters of each square service area.
    pub region_size: f64,
    pub schedule: Schedule,
}

impl Scenario {
    pub fn new(hp: Hyperparams, n_sites: usize, days: usize) -> Self {
        Self {
            hp,
            n_sites,
            days,
            first_day: 0,
            lag: None,
            sd_x: 0.15,
            sd_y: 0.01,
            gamma_level: 0.02,
            theta_rms: 0.01,
            region_size: 5000.0,
            schedule: Schedule::default(),
        }
    }
}

/// Simulator output. `full_y` holds noisy positivity on every grid day and
/// `mean_y` the noise-free means, both grid days x sites.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub data: Dataset,
    pub truth: ModelState,
    pub full_y: DMatrix<f64>,
    pub mean_y: DMatrix<f64>,
}

/// Square service areas on a near-square lattice.
pub fn lattice_regions(n: usize, size: f64) -> Vec<Region> {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    (0..n)
        .map(|i| {
            let (r, c) = ((i / cols) as f64, (i % cols) as f64);
            Region::rectangle(format!("site{i:03}"), c * size, r * size, (c + 1.0) * size, (r + 1.0) * size)
        })
        .collect()
}

/// Neighbour graph over the sites; k is capped at `n - 1`.
pub fn site_graph(regions: &[Region], config: &SpatialConfig) -> Result<SpatialGraph> {
    let config = SpatialConfig { k: config.k.min(regions.len().saturating_sub(1)).max(1), ..config.clone() };
    knn_weights(regions, &config)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Least-squares coefficients of `target` on the columns of `basis`.
fn project(basis: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = cholesky_with_retry(&(basis.transpose() * basis), "projection")?;
    Ok(chol.solve(&(basis.transpose() * target)))
}

fn smoothing_precision(q: f64, rank: usize, hp: &Hyperparams) -> f64 {
    (rank as f64 / q.max(1e-12)).clamp(hp.lambda_lower(), 1e6)
}

/// Draws a ground truth with smooth epidemic-like wastewater curves.
fn sample_truth<R: Rng>(sc: &Scenario, bases: &ModelBases, graph: &SpatialGraph, rng: &mut R) -> Result<ModelState> {
    let hp = &sc.hp;
    let (n, k, l) = (sc.n_sites, hp.k_factors, hp.l_factors);
    let grid = bases.grid;
    let ext_len = grid.extended_len();

    // X curves on the extended grid: baseline plus two or three waves whose
    // timing and height vary by site
    let n_waves = 2 + rng.random_range(0..2);
    let waves: Vec<(f64, f64, f64)> = (0..n_waves)
        .map(|w| {
            let center = ext_len as f64 * (w as f64 + 0.5 + 0.3 * (rng.random::<f64>() - 0.5)) / n_waves as f64;
            let width = ext_len as f64 / (12.0 + 6.0 * rng.random::<f64>());
            let amp = 1.5 + rng.random::<f64>();
            (center, width, amp)
        })
        .collect();
    let mut raw = DMatrix::zeros(ext_len, n);
    for i in 0..n {
        let offset = 0.3 * normal(rng);
        let site_waves: Vec<(f64, f64, f64)> = waves
            .iter()
            .map(|&(c, w, a)| {
                let shift = 50.0 * (rng.random::<f64>() - 0.5);
                let mult = 0.5 + rng.random::<f64>();
                (c + shift, w, a * mult)
            })
            .collect();
        for e in 0..ext_len {
            let mut v = 10.0 + offset;
            for &(c, w, a) in &site_waves {
                let z = (e as f64 - c) / w;
                v += a * (-0.5 * z * z).exp();
            }
            raw[(e, i)] = v;
        }
    }
    let w_eval = bases.loading_x.eval();
    let coef = w_eval.transpose() * &raw;
    let (_, vecs) = sym_eigen_sorted(&(&coef * coef.transpose()));
    let h = vecs.ncols();
    let mut psi = DMatrix::zeros(h, k);
    for c in 0..k {
        let mut col = vecs.column(h - 1 - c).into_owned();
        // sign convention: positive sum
        if col.sum() < 0.0 {
            col = -col;
        }
        psi.set_column(c, &col);
    }
    let beta = psi.transpose() * &coef;
    let mu = DVector::from_iterator(k, beta.row_iter().map(|r| r.mean()));
    let mut alpha = beta.clone();
    for (c, mut row) in alpha.row_iter_mut().enumerate() {
        row.add_scalar_mut(-mu[c]);
    }

    // γ(τ) near gamma_level with a slow oscillation
    let phase = std::f64::consts::TAU * rng.random::<f64>();
    let target = DVector::from_fn(grid.len, |t, _| {
        sc.gamma_level * (1.0 + 0.35 * (std::f64::consts::TAU * 1.3 * t as f64 / grid.len as f64 + phase).sin())
    });
    let gamma = project(bases.gamma.eval(), &target)?;

    // Φ: random orthonormal, weighted toward smooth directions
    let j = bases.loading_theta.dim();
    let z = DMatrix::from_fn(j, l, |r, _| normal(rng) * (-(r as f64) / 3.0).exp());
    let phi = z.qr().q().columns(0, l).into_owned();

    // θ: centered CAR draws scaled to the requested RMS
    let chol = cholesky_with_retry(&graph.precision(), "CAR")?;
    let mut theta = DMatrix::zeros(l, n);
    let mut sigma2_theta = DVector::zeros(l);
    for ell in 0..l {
        let zv = standard_normal_vec(n, rng);
        let mut draw = chol.l().transpose().solve_upper_triangular(&zv).expect("positive diagonal");
        draw.add_scalar_mut(-draw.mean());
        let rms = (draw.norm_squared() / n as f64).sqrt().max(1e-12);
        let scale = sc.theta_rms / rms;
        theta.set_row(ell, &(draw * scale).transpose());
        sigma2_theta[ell] = scale * scale;
    }

    let lambda_gamma = smoothing_precision((bases.gamma.penalty() * &gamma).dot(&gamma), bases.gamma.rank, hp);
    let lambda_f = DVector::from_fn(k, |c, _| {
        let v = psi.column(c);
        smoothing_precision((bases.loading_x.penalty() * v).dot(&v), bases.loading_x.rank, hp)
    });
    let lambda_g = DVector::from_fn(l, |c, _| {
        let v = phi.column(c);
        smoothing_precision((bases.loading_theta.penalty() * v).dot(&v), bases.loading_theta.rank, hp)
    });
    let tau_mu: Vec<f64> = mu.iter().map(|m| 1.0 / (m * m).max(1e-4)).collect();
    let tau_alpha: Vec<f64> = alpha.row_iter().map(|r| 1.0 / (r.norm_squared() / n as f64).max(1e-4)).collect();
    let ratios = |tau: &[f64]| DVector::from_fn(tau.len(), |c, _| if c == 0 { tau[0] } else { tau[c] / tau[c - 1] });

    Ok(ModelState {
        lag: sc.lag.unwrap_or_else(|| rng.random_range(0..=hp.max_lag)),
        gamma,
        theta,
        phi,
        mu,
        alpha,
        psi,
        sigma2_eps_x: sc.sd_x * sc.sd_x,
        sigma2_eps_y: sc.sd_y * sc.sd_y,
        sigma2_theta,
        lambda_gamma,
        lambda_f,
        lambda_g,
        delta_mu: ratios(&tau_mu),
        delta_alpha: ratios(&tau_alpha),
        zeta: DMatrix::from_element(k, n, 1.0),
        nu_alpha: 10.0_f64.clamp(hp.nu_lower, hp.nu_upper),
        a_mu1: 2.0,
        a_mu2: 2.0,
        a_alpha1: 2.0,
        a_alpha2: 2.0,
    })
}

/// Simulates a dataset. With `truth` given, its curves and noise variances
/// are used as is (zero variances give noiseless data); otherwise a truth is
/// drawn from the scenario.
pub fn simulate(sc: &Scenario, truth: Option<&ModelState>, seed: u64) -> Result<Simulation> {
    let hp = &sc.hp;
    let (n, m) = (sc.n_sites, sc.days);
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 sites, got {n}")));
    }
    if m < 2 * hp.max_lag || m < 2 {
        return Err(Error::Argument(format!("{m} days is too short for max_lag {}", hp.max_lag)));
    }
    let s = &sc.schedule;
    if s.x_every == 0 || s.y_every == 0 {
        return Err(Error::Argument("sampling intervals must be at least 1 day".into()));
    }
    let probs = [s.y_tail_missing, s.y_random_missing, s.x_random_missing];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Argument("missingness fractions must lie in [0, 1]".into()));
    }
    if let Some(&w) = s.withheld_sites.iter().find(|&&w| w >= n) {
        return Err(Error::Bounds { index: w, len: n });
    }
    if !(sc.sd_x >= 0.0 && sc.sd_y >= 0.0) {
        return Err(Error::Argument("noise standard deviations must be nonnegative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid { first_day: sc.first_day, ..Grid::new(m, hp.max_lag) };
    let bases = ModelBases::build(&grid, hp)?;
    let regions = lattice_regions(n, sc.region_size);

    let truth = match truth {
        Some(t) => {
            let mut probe = t.clone();
            probe.sigma2_eps_x = 1.0;
            probe.sigma2_eps_y = 1.0;
            probe.validate_support(hp, n)?;
            t.clone()
        }
        None => {
            let graph = site_graph(&regions, &hp.spatial)?;
            sample_truth(sc, &bases, &graph, &mut rng)?
        }
    };
    let curves = DerivedCurves::compute(&truth, &bases)?;
    let (sd_x, sd_y) = (truth.sigma2_eps_x.sqrt(), truth.sigma2_eps_y.sqrt());

    let mean_y = curves.fitted_y.clone();
    let full_y = mean_y.map(|v| (v + sd_y * normal(&mut rng)).clamp(0.0, 1.0));
    let y_end = ((m as f64) * (1.0 - s.y_tail_missing)).floor() as usize;

    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let mut ys = SiteSeries::default();
        for t in (0..y_end).step_by(s.y_every) {
            let keep = rng.random::<f64>() >= s.y_random_missing;
            if keep && !s.withheld_sites.contains(&i) {
                ys.times.push(t);
                ys.values.push(full_y[(t, i)]);
            }
        }
        let mut xs = SiteSeries::default();
        for t in (0..m).step_by(s.x_every) {
            let noise = sd_x * normal(&mut rng);
            let keep = t == 0 || rng.random::<f64>() >= s.x_random_missing;
            if keep {
                xs.times.push(t);
                xs.values.push(curves.x[(grid.extension + t, i)] + noise);
            }
        }
        y.push(ys);
        x.push(xs);
    }

    let data = Dataset { grid, sites: regions.iter().map(|r| r.id.clone()).collect(), y, x, regions };
    data.validate()?;
    Ok(Simulation { data, truth, full_y, mean_y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::curves::predict_y;
    use proptest::prelude::*;

    fn small_hp() -> Hyperparams {
        Hyperparams { k_factors: 2, l_factors: 1, p_gamma: 4, h_lrtps: 8, j_dr: 8, max_lag: 5, ..Default::default() }
    }

    #[test]
    fn noiseless_full_schedule_reproduces_mean() {
        let mut sc = Scenario::new(small_hp(), 4, 40);
        sc.schedule = Schedule::full();
        let mut truth = simulate(&sc, None, 1).unwrap().truth;
        truth.sigma2_eps_x = 0.0;
        truth.sigma2_eps_y = 0.0;
        let sim = simulate(&sc, Some(&truth), 2).unwrap();
        let bases = ModelBases::build(&sim.data.grid, &sc.hp).unwrap();
        let curves = DerivedCurves::compute(&truth, &bases).unwrap();
        for i in 0..4 {
            assert_eq!(sim.data.y[i].len(), 40);
            let mean = predict_y(&truth, &bases, i, &sim.data.y[i].times).unwrap();
            for (r, &v) in sim.data.y[i].values.iter().enumerate() {
                assert!((v - mean[r]).abs() < 1e-12);
            }
            for (&t, &v) in sim.data.x[i].times.iter().zip(&sim.data.x[i].values) {
                assert_eq!(v, curves.x[(5 + t, i)]);
            }
        }
    }

    #[test]
    fn weekly_counts() {
        let sc = Scenario::new(small_hp(), 3, 60);
        let sim = simulate(&sc, None, 3).unwrap();
        for s in &sim.data.x {
            assert_eq!(s.len(), 60 / 7 + 1);
        }
        // the tail 30% of y is missing
        assert!(sim.data.y.iter().all(|s| s.times.last() == Some(&41)));
    }

    #[test]
    fn deterministic_under_seed() {
        let sc = Scenario::new(small_hp(), 3, 40);
        let a = simulate(&sc, None, 9).unwrap();
        let b = simulate(&sc, None, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate(&sc, None, 10).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn truth_is_a_valid_state() {
        let mut sc = Scenario::new(small_hp(), 5, 50);
        sc.schedule.withheld_sites = vec![4];
        let sim = simulate(&sc, None, 4).unwrap();
        sim.truth.validate(&sc.hp, 5).unwrap();
        assert!(sim.data.y[4].is_empty());
        let curves = DerivedCurves::compute(&sim.truth, &ModelBases::build(&sim.data.grid, &sc.hp).unwrap()).unwrap();
        let theta = curves.theta;
        let rms = (theta.norm_squared() / theta.len() as f64).sqrt();
        assert!(rms > 1e-3 && rms < 0.05, "theta rms {rms}");
        assert!(sim.mean_y.iter().all(|v| (0.05..0.6).contains(v)));
    }

    #[test]
    fn rejects_short_grid() {
        let sc = Scenario::new(small_hp(), 3, 9);
        assert!(matches!(simulate(&sc, None, 0), Err(Error::Argument(_))));
        let sc = Scenario::new(small_hp(), 1, 40);
        assert!(simulate(&sc, None, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn output_respects_dataset_invariants(
            n in 2usize..6,
            days in 20usize..70,
            k in 1usize..4,
            l in 1usize..3,
            max_lag in 0usize..8,
            tail in 0.0f64..0.9,
            drop in 0.0f64..0.5,
            seed in 0u64..1000,
        ) {
            prop_assume!(days >= 2 * max_lag);
            let hp = Hyperparams { k_factors: k, l_factors: l, p_gamma: 4, h_lrtps: 6, j_dr: 6, max_lag, ..Default::default() };
            let mut sc = Scenario::new(hp, n, days);
            sc.schedule.y_tail_missing = tail;
            sc.schedule.y_random_missing = drop;
            sc.schedule.x_random_missing = drop;
            let sim = simulate(&sc, None, seed).unwrap();
            sim.data.validate().unwrap();
            prop_assert_eq!(sim.data.n_sites(), n);
            prop_assert!(sim.truth.lag <= max_lag);
        }
    }
}
