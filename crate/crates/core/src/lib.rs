pub mod basis;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod sampler;
pub mod spatial;

pub use error::{Error, Result};
