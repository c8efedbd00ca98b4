//! Interpretable cytoarchitecture analysis: cell segmentation, cell shape
//! embedding, CDF region summaries and boosted structure detectors.

pub mod binfmt;
pub mod classify;
pub mod error;
pub mod features;
pub mod geometry;
pub mod imaging;
pub mod regional;

pub use error::{Error, Result};
