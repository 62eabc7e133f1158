//! Mapping RAW camera images between illuminations and sensors with 3x3
//! transforms predicted by tiny MLPs, benchmarked against diagonal and
//! KNN-interpolation baselines on a spectral simulator.

pub mod color;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod knn;
pub mod mlp;
pub mod par;
pub mod preprocess;
pub mod rawf;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
