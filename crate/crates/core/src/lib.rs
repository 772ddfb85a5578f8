pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod params;
pub mod projections;
pub mod scorers;
pub mod tensor_core;
pub mod training;

pub use error::{Error, Result};
