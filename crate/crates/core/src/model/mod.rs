//! The generative model: data types, the joint log-density and a simulator.

pub mod bases;
pub mod curves;
pub mod data;
pub mod density;
pub mod params;
pub mod simulate;

pub use bases::{ModelBases, PenalizedBasis};
pub use curves::{predict_y, sample_y, DerivedCurves};
pub use data::{Dataset, SiteSeries};
pub use density::{log_joint, log_joint_terms, LogJointTerms};
pub use params::{Hyperparams, ModelState, SliceSettings, ORTHOGONALITY_TOL};
pub use simulate::{lattice_regions, simulate, site_graph, Scenario, Schedule, Simulation};
