pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod diffusion;
pub mod data;
pub mod ssm;
pub mod lstm;
pub mod model;
pub mod io;
pub mod metrics;
pub mod training;
