use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{self, Checkpoint};
use super::init::initial_state;
use super::{checkpoint_path, FitProblem, RunConfig};
use crate::error::{Error, Result};
use crate::model::{log_joint, DerivedCurves, ModelState};
use crate::sampler::{sweep, GibbsContext};

/// Retained evaluations of one curve, draw-major, stored as `f32`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveTrace {
    pub width: usize,
    #[serde(skip)]
    pub values: Vec<f32>,
}

impl CurveTrace {
    pub fn new(width: usize) -> Self {
        Self { width, values: Vec::new() }
    }

    pub fn push(&mut self, curve: impl IntoIterator<Item = f64>) {
        let before = self.values.len();
        self.values.extend(curve.into_iter().map(|v| v as f32));
        debug_assert_eq!(self.values.len() - before, self.width);
    }

    pub fn draws(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.values.len() / self.width
        }
    }

    pub fn draw(&self, d: usize) -> &[f32] {
        &self.values[d * self.width..(d + 1) * self.width]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalarTraces {
    pub lag: Vec<usize>,
    pub sigma2_eps_y: Vec<f64>,
    pub sigma2_eps_x: Vec<f64>,
    pub mu1: Vec<f64>,
    pub log_joint: Vec<f64>,
}

/// Retained draws of one chain: lag histogram, scalar traces and curve
/// evaluations (γ and the fitted y on the observation grid, μ and each
/// `X_i` on the extended grid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain: usize,
    pub lag_counts: Vec<u64>,
    pub scalars: ScalarTraces,
    pub gamma: CurveTrace,
    pub mu: CurveTrace,
    pub x: Vec<CurveTrace>,
    pub fitted_y: Vec<CurveTrace>,
}

impl ChainOutput {
    pub fn empty(chain: usize, problem: &FitProblem) -> Self {
        let grid = problem.data.grid;
        let n = problem.data.n_sites();
        Self {
            chain,
            lag_counts: vec![0; problem.hp.max_lag + 1],
            scalars: ScalarTraces::default(),
            gamma: CurveTrace::new(grid.len),
            mu: CurveTrace::new(grid.extended_len()),
            x: vec![CurveTrace::new(grid.extended_len()); n],
            fitted_y: vec![CurveTrace::new(grid.len); n],
        }
    }

    pub fn draws(&self) -> usize {
        self.scalars.lag.len()
    }

    /// Curve traces in storage order: γ, μ, every `X_i`, every fitted `y_i`.
    pub fn curves(&self) -> impl Iterator<Item = &CurveTrace> {
        [&self.gamma, &self.mu].into_iter().chain(&self.x).chain(&self.fitted_y)
    }

    pub fn curves_mut(&mut self) -> impl Iterator<Item = &mut CurveTrace> {
        [&mut self.gamma, &mut self.mu].into_iter().chain(&mut self.x).chain(&mut self.fitted_y)
    }

    fn record(&mut self, state: &ModelState, problem: &FitProblem) -> Result<()> {
        let c = DerivedCurves::compute(state, &problem.bases)?;
        let lj = log_joint(state, &problem.data, &problem.hp, &problem.bases, &problem.graph)?;
        self.lag_counts[state.lag] += 1;
        self.scalars.lag.push(state.lag);
        self.scalars.sigma2_eps_y.push(state.sigma2_eps_y);
        self.scalars.sigma2_eps_x.push(state.sigma2_eps_x);
        self.scalars.mu1.push(state.mu[0]);
        self.scalars.log_joint.push(lj);
        self.gamma.push(c.gamma.iter().copied());
        self.mu.push(c.mu.iter().copied());
        for i in 0..c.x.ncols() {
            self.x[i].push(c.x.column(i).iter().copied());
            self.fitted_y[i].push(c.fitted_y.column(i).iter().copied());
        }
        Ok(())
    }
}

/// One chain in progress: its state, random stream and collected output.
#[derive(Clone, Debug)]
pub struct ChainRunner {
    pub chain: usize,
    pub config: RunConfig,
    /// Sweeps completed so far.
    pub iteration: usize,
    pub state: ModelState,
    pub ctx: GibbsContext,
    pub output: ChainOutput,
    problem: FitProblem,
}

impl ChainRunner {
    pub fn start(problem: &FitProblem, config: &RunConfig, chain: usize) -> Result<Self> {
        config.validate()?;
        let state = initial_state(&problem.data, &problem.hp, &problem.bases);
        state.validate(&problem.hp, problem.data.n_sites())?;
        let ctx = GibbsContext::seeded(
            problem.data.clone(),
            problem.hp.clone(),
            problem.bases.clone(),
            problem.graph.clone(),
            config.seed,
            chain as u64,
        )?;
        Ok(Self {
            chain,
            config: config.clone(),
            iteration: 0,
            state,
            ctx,
            output: ChainOutput::empty(chain, problem),
            problem: problem.clone(),
        })
    }

    pub fn resume(problem: &FitProblem, ckpt: Checkpoint) -> Result<Self> {
        if ckpt.fingerprint != problem.fingerprint() {
            return Err(Error::Checkpoint(format!(
                "chain {} checkpoint was written for different data or hyperparameters",
                ckpt.chain
            )));
        }
        ckpt.state.validate_support(&problem.hp, problem.data.n_sites())?;
        let mut ctx = GibbsContext::new(
            problem.data.clone(),
            problem.hp.clone(),
            problem.bases.clone(),
            problem.graph.clone(),
            ckpt.rng,
        )?;
        ctx.refresh_lag(ckpt.state.lag)?;
        Ok(Self {
            chain: ckpt.chain,
            config: ckpt.config,
            iteration: ckpt.iteration,
            state: ckpt.state,
            ctx,
            output: ckpt.output,
            problem: problem.clone(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            chain: self.chain,
            iteration: self.iteration,
            config: self.config.clone(),
            hp: self.problem.hp.clone(),
            fingerprint: self.problem.fingerprint(),
            grid: self.problem.data.grid,
            sites: self.problem.data.sites.clone(),
            state: self.state.clone(),
            rng: self.ctx.rng.clone(),
            output: self.output.clone(),
        }
    }

    /// One sweep, recording the state when the sweep is retained.
    pub fn step(&mut self) -> Result<()> {
        sweep(&mut self.state, &mut self.ctx)?;
        self.iteration += 1;
        if self.config.retains(self.iteration) {
            self.output.record(&self.state, &self.problem)?;
        }
        Ok(())
    }

    /// Sweeps until `until` sweeps are complete. A failing sweep restores the
    /// last good state, writes it as a checkpoint and reports the chain and
    /// iteration.
    pub fn run_to(&mut self, until: usize, checkpoint_dir: Option<&Path>) -> Result<()> {
        self.config.iterations = self.config.iterations.max(until);
        while self.iteration < until {
            let saved = checkpoint_dir.map(|_| (self.state.clone(), self.ctx.rng.clone()));
            if let Err(e) = self.step() {
                let at = self.iteration + 1;
                if let (Some(dir), Some((state, rng))) = (checkpoint_dir, saved) {
                    self.state = state;
                    self.ctx.rng = rng;
                    checkpoint::write(&checkpoint_path(dir, self.chain), &self.checkpoint())?;
                }
                log::error!("chain {} failed at sweep {at}: {e}", self.chain);
                return Err(Error::Sampler { chain: self.chain, iteration: at, message: e.to_string() });
            }
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.iteration % every == 0 && self.iteration < until {
                    checkpoint::write(&checkpoint_path(dir, self.chain), &self.checkpoint())?;
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            checkpoint::write(&checkpoint_path(dir, self.chain), &self.checkpoint())?;
        }
        Ok(())
    }
}
