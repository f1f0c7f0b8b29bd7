//! Evaluation and validation of statistical shape models built from
//! correspondence-point ensembles.
//!
//! The crate covers PCA shape spaces and their quantitative metrics
//! (compactness, generalization, specificity), cluster analysis, landmark
//! and measurement inference through thin-plate-spline warps, sparse
//! surface-offset lesion screening, an offsets-based pathology classifier,
//! and a synthetic box-bump generator that supplies ground truth for all of
//! the above.

pub mod classifier;
pub mod cluster;
pub mod error;
pub mod metrics;
pub mod morphometry;
pub mod screening;
pub mod seed;
pub mod shape_data;
pub mod shape_space;
pub mod synthetic;

pub use error::{Error, Result};
