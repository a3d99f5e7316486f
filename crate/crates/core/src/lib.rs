//! Automated relational meta-learning on few-shot 2D regression.

pub mod basemodel;
pub mod diffmath;
pub mod error;
pub mod harness;
pub mod metaloop;
pub mod parallel;
mod params;
pub mod relgraph;
pub mod taskenc;
pub mod taskgen;

pub use error::{Error, Result};
