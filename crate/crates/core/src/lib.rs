//! Dynamic domain- and content-adaptive segmentation on a small U-Net, with
//! the data, planning, training, inference and evaluation pipeline around it.

pub mod backbone;
pub mod data;
pub mod dcac;
pub mod error;
pub mod eval;
pub mod inference;
pub mod losses;
pub mod model;
pub mod params;
pub mod planner;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
