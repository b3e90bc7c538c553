pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod mtregression;
pub mod nn;
pub mod validation;
pub mod weighting;

pub use error::{Error, Result};
