//! Maximum likelihood estimation of structural equation models.

mod engine;
mod estimate;
pub mod optimizer;
mod simulate;
mod standardize;

pub use engine::{f_ml, implied_covariance, log_likelihood, ml_gradient, Engine, Evaluated, MlObjective};
pub use estimate::{fit, fit_matrices, start_values, ChiSquareMultiplier, EstimationOptions, FitResult, ParameterEstimate};
pub use simulate::simulate;
pub use standardize::{latent_covariance, standardize, standardized_solution, StandardizedEstimate};

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum SemError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("model is under-identified: {parameters} free parameters for {moments} moments (df = {df})")]
    UnderIdentified { moments: i64, parameters: i64, df: i64 },
    #[error("sample covariance matrix is not positive definite")]
    SampleNotPositiveDefinite,
    #[error("model-implied covariance matrix is not positive definite")]
    ImpliedNotPositiveDefinite,
    #[error("I - B is singular")]
    SingularBeta,
    #[error("parameter vector has length {found}, expected {expected}")]
    ParameterLength { expected: usize, found: usize },
    #[error("implied variance of `{name}` is not positive")]
    NonPositiveVariance { name: String },
    #[error("invalid estimation options: {0}")]
    InvalidOptions(String),
}
