pub mod agent;
pub mod cli;
pub mod critic;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod eval;
pub mod filters;
pub mod image;
pub mod model;
pub mod nn;
pub mod par;
pub mod trainer;

pub use error::{Error, Result};
