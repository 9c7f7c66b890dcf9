pub mod attacks;
pub mod detector;
pub mod error;
pub mod evalharness;
pub mod importance;
pub mod netmodel;
pub mod nsga2;
pub mod placement;
pub mod powerflow;
pub mod rng;
pub mod stateest;

pub use error::{Error, Result};
