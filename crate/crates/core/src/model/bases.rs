use nalgebra::DMatrix;

use super::params::Hyperparams;
use crate::basis::{build_bspline, build_demmler_reinsch, build_lrtps, BasisSystem, Grid, PENALTY_ZERO_TOL};
use crate::error::{Error, Result};
use crate::linalg::nullspace_projector;

/// A known basis plus what the priors need from its penalty.
#[derive(Clone, Debug)]
pub struct PenalizedBasis {
    pub system: BasisSystem,
    /// Projector onto the penalty nullspace.
    pub null_projector: DMatrix<f64>,
    /// Rank of the penalty.
    pub rank: usize,
}

impl PenalizedBasis {
    pub fn new(system: BasisSystem) -> Self {
        let (null_projector, rank) = nullspace_projector(&system.penalty, PENALTY_ZERO_TOL);
        Self { system, null_projector, rank }
    }

    pub fn eval(&self) -> &DMatrix<f64> {
        &self.system.eval
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.system.penalty
    }

    pub fn dim(&self) -> usize {
        self.system.rank()
    }

    /// Prior precision `λ Ω + κ P0` of a coefficient block.
    pub fn prior_precision(&self, lambda: f64, null_precision: f64) -> DMatrix<f64> {
        self.penalty() * lambda + &self.null_projector * null_precision
    }
}

/// The three known bases of the model: B-splines for γ on the observation
/// grid, LR-TPS for the wastewater loadings on the extended grid and
/// Demmler–Reinsch for the random-effect loadings on the observation grid.
#[derive(Clone, Debug)]
pub struct ModelBases {
    pub grid: Grid,
    pub gamma: PenalizedBasis,
    pub loading_x: PenalizedBasis,
    pub loading_theta: PenalizedBasis,
}

impl ModelBases {
    pub fn build(grid: &Grid, hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        if hp.max_lag > grid.extension {
            return Err(Error::Argument(format!(
                "grid extension {} is shorter than max_lag {}",
                grid.extension, hp.max_lag
            )));
        }
        Ok(Self {
            grid: *grid,
            gamma: PenalizedBasis::new(build_bspline(grid, hp.p_gamma)?),
            loading_x: PenalizedBasis::new(build_lrtps(&grid.extended(), hp.h_lrtps)?),
            loading_theta: PenalizedBasis::new(build_demmler_reinsch(grid, hp.j_dr)?),
        })
    }
}
