use std::borrow::Cow;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::evaluate_subset;
use crate::error::{Error, Result};
use crate::model::{Dataset, Hyperparams, ModelBases, ModelState};
use crate::spatial::SpatialGraph;

/// Basis rows at one site's observation days.
#[derive(Clone, Debug)]
pub struct SiteCache {
    pub y_times: Vec<usize>,
    pub y: DVector<f64>,
    pub x_times: Vec<usize>,
    pub x: DVector<f64>,
    /// `B` at the y days.
    pub b_y: DMatrix<f64>,
    /// `V` at the y days, and its Gram matrix.
    pub v_y: DMatrix<f64>,
    pub v_y_gram: DMatrix<f64>,
    /// `W` at the x days (extended-grid rows), and its Gram matrix.
    pub w_x: DMatrix<f64>,
    pub w_x_gram: DMatrix<f64>,
}

/// Everything a chain needs besides its state: data, bases, graph, cached
/// basis subsets and the chain's random stream.
#[derive(Clone, Debug)]
pub struct GibbsContext {
    pub data: Dataset,
    pub hp: Hyperparams,
    pub bases: Arc<ModelBases>,
    pub graph: Arc<SpatialGraph>,
    pub sites: Vec<SiteCache>,
    /// `Q + jitter I`.
    pub car_precision: DMatrix<f64>,
    pub rng: ChaCha8Rng,
    lag_cache: Option<(usize, Vec<DMatrix<f64>>)>,
    total_y: usize,
    total_x: usize,
}

impl GibbsContext {
    pub fn new(
        data: Dataset,
        hp: Hyperparams,
        bases: Arc<ModelBases>,
        graph: Arc<SpatialGraph>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
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
        if hp.max_lag > data.grid.extension {
            return Err(Error::Argument("grid extension shorter than max_lag".into()));
        }
        let ext = data.grid.extension;
        let mut sites = Vec::with_capacity(n);
        for i in 0..n {
            let (ys, xs) = (&data.y[i], &data.x[i]);
            let b_y = evaluate_subset(&bases.gamma.system, &ys.times)?;
            let v_y = evaluate_subset(&bases.loading_theta.system, &ys.times)?;
            let x_rows: Vec<usize> = xs.times.iter().map(|t| ext + t).collect();
            let w_x = evaluate_subset(&bases.loading_x.system, &x_rows)?;
            sites.push(SiteCache {
                y_times: ys.times.clone(),
                y: DVector::from_column_slice(&ys.values),
                x_times: xs.times.clone(),
                x: DVector::from_column_slice(&xs.values),
                v_y_gram: v_y.transpose() * &v_y,
                w_x_gram: w_x.transpose() * &w_x,
                b_y,
                v_y,
                w_x,
            });
        }
        let car_precision = graph.precision();
        let (total_y, total_x) = (data.total_y(), data.total_x());
        Ok(Self { data, hp, bases, graph, sites, car_precision, rng, lag_cache: None, total_y, total_x })
    }

    /// Context with the stream `chain` of the generator seeded by `seed`.
    pub fn seeded(
        data: Dataset,
        hp: Hyperparams,
        bases: Arc<ModelBases>,
        graph: Arc<SpatialGraph>,
        seed: u64,
        chain: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chain);
        Self::new(data, hp, bases, graph, rng)
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn total_y(&self) -> usize {
        self.total_y
    }

    pub fn total_x(&self) -> usize {
        self.total_x
    }

    /// Replaces observation values (same days) for every site.
    pub fn set_observations(&mut self, y: &[DVector<f64>], x: &[DVector<f64>]) -> Result<()> {
        if y.len() != self.n() || x.len() != self.n() {
            return Err(Error::Dimension("one value vector per site expected".into()));
        }
        for (i, site) in self.sites.iter_mut().enumerate() {
            if y[i].len() != site.y.len() || x[i].len() != site.x.len() {
                return Err(Error::Dimension(format!("site {i}: observation count changed")));
            }
            site.y.copy_from(&y[i]);
            site.x.copy_from(&x[i]);
            self.data.y[i].values = y[i].as_slice().to_vec();
            self.data.x[i].values = x[i].as_slice().to_vec();
        }
        Ok(())
    }

    fn w_y_rows(&self, i: usize, lag: usize) -> Result<Vec<usize>> {
        let grid = self.data.grid;
        self.sites[i].y_times.iter().map(|&t| grid.extended_index(t, lag)).collect()
    }

    /// `W` at site `i`'s y days shifted back by `lag`.
    pub fn w_y(&self, i: usize, lag: usize) -> Result<Cow<'_, DMatrix<f64>>> {
        if let Some((cached, blocks)) = &self.lag_cache {
            if *cached == lag {
                return Ok(Cow::Borrowed(&blocks[i]));
            }
        }
        Ok(Cow::Owned(evaluate_subset(&self.bases.loading_x.system, &self.w_y_rows(i, lag)?)?))
    }

    /// Rebuilds the lag-shifted blocks when `lag` differs from the cached one.
    pub fn refresh_lag(&mut self, lag: usize) -> Result<()> {
        if matches!(&self.lag_cache, Some((cached, _)) if *cached == lag) {
            return Ok(());
        }
        let blocks = (0..self.n())
            .map(|i| evaluate_subset(&self.bases.loading_x.system, &self.w_y_rows(i, lag)?))
            .collect::<Result<Vec<_>>>()?;
        self.lag_cache = Some((lag, blocks));
        Ok(())
    }

    /// Latent wastewater `X_i` on the full extended grid.
    pub fn x_extended(&self, state: &ModelState, i: usize) -> DVector<f64> {
        let beta_i = &state.psi * (state.alpha.column(i) + &state.mu);
        self.bases.loading_x.eval() * beta_i
    }

    /// `X_i` at the y days shifted back by `state.lag`.
    pub fn x_at_y(&self, state: &ModelState, i: usize) -> Result<DVector<f64>> {
        let beta_i = &state.psi * (state.alpha.column(i) + &state.mu);
        Ok(self.w_y(i, state.lag)?.as_ref() * beta_i)
    }

    /// `X_i` at the x days.
    pub fn x_at_x(&self, state: &ModelState, i: usize) -> DVector<f64> {
        let beta_i = &state.psi * (state.alpha.column(i) + &state.mu);
        &self.sites[i].w_x * beta_i
    }

    /// `γ` at the y days.
    pub fn gamma_at_y(&self, state: &ModelState, i: usize) -> DVector<f64> {
        &self.sites[i].b_y * &state.gamma
    }

    /// `θ_i` at the y days.
    pub fn theta_at_y(&self, state: &ModelState, i: usize) -> DVector<f64> {
        &self.sites[i].v_y * (&state.phi * state.theta.column(i))
    }

    /// Fitted positivity mean at the y days.
    pub fn fitted_y(&self, state: &ModelState, i: usize) -> Result<DVector<f64>> {
        Ok(self.gamma_at_y(state, i).component_mul(&self.x_at_y(state, i)?) + self.theta_at_y(state, i))
    }

    /// Residual sums of squares for the y and x likelihoods.
    pub fn residual_sums(&self, state: &ModelState) -> Result<(f64, f64)> {
        let mut ssy = 0.0;
        let mut ssx = 0.0;
        for i in 0..self.n() {
            ssy += (&self.sites[i].y - self.fitted_y(state, i)?).norm_squared();
            ssx += (&self.sites[i].x - self.x_at_x(state, i)).norm_squared();
        }
        Ok((ssy, ssx))
    }
}
