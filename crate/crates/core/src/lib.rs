pub mod bootstrap;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod models;
pub mod pipeline;
pub mod process;
pub mod rng;
pub mod simulation;
pub mod smoothing;
pub mod stats;
pub mod transform;
pub mod weights;

pub use error::{Error, Result};
