//! Model syntax, validation and compilation into LISREL-form parameter
//! matrices.

mod matrices;
mod syntax;

pub use matrices::{
    build_matrices, count_df, BuildOptions, DegreesOfFreedom, Entry, Identification, MatrixKind,
    ModelParameter, ParamKind, ParamMatrices, PatternMatrix, Relation,
};
pub use syntax::{parse_model, validate, Covariance, Indicator, LatentDef, ModelSpec, Modifier, Regression};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("model declares no latent variables")]
    NoLatents,
    #[error("latent `{name}` is defined more than once (line {line})")]
    DuplicateLatent { name: String, line: usize },
    #[error("duplicate statement `{statement}` (line {line})")]
    DuplicateStatement { statement: String, line: usize },
    #[error("indicator `{indicator}` is listed under both `{first}` and `{second}`")]
    DuplicateIndicator {
        indicator: String,
        first: String,
        second: String,
    },
    #[error("`{name}` is used as an indicator but is also a latent variable")]
    LatentAsIndicator { name: String },
    #[error("undeclared latent `{name}` in regression")]
    UndeclaredLatent { name: String },
    #[error("undeclared variable `{name}` in covariance")]
    UndeclaredVariable { name: String },
    #[error("label `{label}` is used more than once")]
    DuplicateLabel { label: String },
    #[error("regression graph contains a directed cycle through {cycle:?}")]
    CyclicRegression { cycle: Vec<String> },
    #[error("unsupported covariance `{a} ~~ {b}`: {reason}")]
    UnsupportedCovariance { a: String, b: String, reason: String },
    #[error("marker indicator `{indicator}` of `{latent}` carries a label; fix a loading explicitly instead")]
    LabeledMarker { latent: String, indicator: String },
    #[error("variable order does not match the model indicators (missing: {missing:?}, unexpected: {unexpected:?})")]
    VariableOrder {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
}
