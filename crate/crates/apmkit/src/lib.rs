//! Site-scale archaeological predictive modeling from multispectral raster
//! data: band difference ratios, annuli median/MAD features, PCA+LDA
//! classification with nested leave-one-out cross-validation, ROC/AUC
//! evaluation and convex combination with a conventional score source.

pub mod annuli;
pub mod error;
pub mod raster;
pub mod sites;
pub mod transform;
pub mod util;

pub use error::{Error, Result};
