pub mod bench;
pub mod config;
pub mod costmodel;
mod error;
pub mod geometry;
pub mod graph;
pub mod policy;
pub mod predictor;
pub mod solvers;
pub mod train;

pub use error::{CoopError, Result};
