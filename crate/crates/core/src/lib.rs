pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod backbone;
pub mod dataset;
pub mod rpn;
pub mod roi_heads;
pub mod losses;
pub mod model;
pub mod trainer;
pub mod evaluator;
pub mod config;
