//! Structural equation modeling toolkit.
//!
//! The crate is organised around the usual analysis pipeline:
//!
//! * [`model`] parses model syntax and compiles it into LISREL-form
//!   parameter matrices;
//! * [`data`] ingests delimited tables and computes sample moments;
//! * [`sem`] evaluates the implied covariance matrix and the maximum
//!   likelihood discrepancy, fits models and simulates data;
//! * [`indices`] computes goodness-of-fit statistics;
//! * [`psychometrics`] and [`efa`] cover reliability, sampling adequacy and
//!   exploratory factor analysis;
//! * [`effects`] decomposes structural effects and bootstraps their
//!   confidence intervals;
//! * [`report`] renders results as JSON or aligned text tables.

pub mod data;
pub mod efa;
pub mod effects;
pub mod indices;
pub mod linalg;
pub mod model;
pub mod psychometrics;
pub mod report;
pub mod sem;
mod stats;

pub use data::{covariance, frequency_table, load_table, Dataset, DataError, Divisor, LoadOptions, SampleMoments};
pub use model::{build_matrices, count_df, parse_model, BuildOptions, Identification, ModelError, ModelSpec, ParamMatrices};
pub use sem::{fit, EstimationOptions, FitResult, SemError};

/// Bundled example model: five constructs, 21 items, seven structural paths.
pub const WULIANGYE_MODEL: &str = include_str!("../../../assets/wuliangye.model");
