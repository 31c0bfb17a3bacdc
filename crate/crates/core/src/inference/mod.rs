//! Chain orchestration, checkpoints and posterior summaries.

mod chain;
pub mod checkpoint;
mod init;
mod summary;

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{site_graph, Dataset, Hyperparams, ModelBases};
use crate::spatial::SpatialGraph;

pub use chain::{ChainOutput, ChainRunner, CurveTrace, ScalarTraces};
pub use init::{initial_state, interpolate};
pub use summary::{
    contiguous_interval, ess, hpd_discrete, lag_posterior, mu_gamma_density, summarize_curves, write_curve_csv,
    write_histogram_csv, write_lag_csv, Band, CurveSummaries, Ess, Histogram2d,
};

/// Sweep counts, retention and seeding for a multi-chain run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Sweeps between checkpoint writes; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { iterations: 5000, burn_in: 2000, thin: 2, chains: 2, seed: 1, checkpoint_every: 1000 }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Argument("thin must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::Argument("chains must be at least 1".into()));
        }
        if self.burn_in > self.iterations {
            return Err(Error::Argument(format!(
                "burn_in {} exceeds iterations {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// Whether sweep number `sweep` (1-based) is kept.
    pub fn retains(&self, sweep: usize) -> bool {
        sweep > self.burn_in && (sweep - self.burn_in) % self.thin == 0
    }

    pub fn retained_draws(&self) -> usize {
        (self.iterations - self.burn_in.min(self.iterations)) / self.thin.max(1)
    }
}

/// Data with its bases and neighbour graph, shared by all chains.
#[derive(Clone, Debug)]
pub struct FitProblem {
    pub data: Dataset,
    pub hp: Hyperparams,
    pub bases: Arc<ModelBases>,
    pub graph: Arc<SpatialGraph>,
}

impl FitProblem {
    pub fn new(data: Dataset, hp: Hyperparams) -> Result<Self> {
        data.validate()?;
        hp.validate()?;
        let graph = site_graph(&data.regions, &hp.spatial)?;
        Self::with_graph(data, hp, graph)
    }

    pub fn with_graph(data: Dataset, hp: Hyperparams, graph: SpatialGraph) -> Result<Self> {
        data.validate()?;
        hp.validate()?;
        if graph.ids != data.sites {
            return Err(Error::Argument("graph sites differ from data sites".into()));
        }
        let bases = ModelBases::build(&data.grid, &hp)?;
        Ok(Self { data, hp, bases: Arc::new(bases), graph: Arc::new(graph) })
    }

    /// SHA-256 of the serialized data and hyperparameters.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.data).expect("dataset serializes"));
        h.update(serde_json::to_vec(&self.hp).expect("hyperparameters serialize"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Runs `config.chains` independent chains in parallel. With a checkpoint
/// directory each chain writes `chain{c}.ckpt` there periodically, at the
/// end and on failure.
pub fn run(problem: &FitProblem, config: &RunConfig, checkpoint_dir: Option<&Path>) -> Result<Vec<ChainOutput>> {
    config.validate()?;
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut runner = ChainRunner::start(problem, config, c)?;
            runner.run_to(config.iterations, checkpoint_dir)?;
            Ok(runner.output)
        })
        .collect()
}

/// Continues chains from checkpoint files to `iterations` sweeps.
pub fn resume(
    problem: &FitProblem,
    checkpoints: &[&Path],
    iterations: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<ChainOutput>> {
    checkpoints
        .par_iter()
        .map(|path| {
            let ckpt = checkpoint::read(path)?;
            let mut runner = ChainRunner::resume(problem, ckpt)?;
            runner.run_to(iterations, checkpoint_dir)?;
            Ok(runner.output)
        })
        .collect()
}

pub fn checkpoint_path(dir: &Path, chain: usize) -> std::path::PathBuf {
    dir.join(format!("chain{chain}.ckpt"))
}
