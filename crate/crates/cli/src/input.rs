//! File loading, hashing and the error-to-exit-code mapping.

use std::fmt;
use std::path::Path;

use latentpath::effects::EffectError;
use latentpath::efa::EfaError;
use latentpath::indices::IndexError;
use latentpath::psychometrics::PsychometricError;
use latentpath::{covariance, parse_model, DataError, Dataset, Divisor, LoadOptions, ModelError, ModelSpec, SampleMoments, SemError};
use sha2::{Digest, Sha256};

/// Usage errors exit with 2, domain errors with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(format!("model: {e}"))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InsufficientRows(_) => CliError::Domain(e.to_string()),
            _ => CliError::Usage(format!("data: {e}")),
        }
    }
}

impl From<SemError> for CliError {
    fn from(e: SemError) -> Self {
        match e {
            SemError::Model(m) => m.into(),
            SemError::Data(d) => d.into(),
            SemError::InvalidOptions(_) | SemError::ParameterLength { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<EffectError> for CliError {
    fn from(e: EffectError) -> Self {
        match e {
            EffectError::Sem(s) => s.into(),
            EffectError::UnknownLatent(_) | EffectError::MissingLabel(_) | EffectError::InvalidOptions(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<PsychometricError> for CliError {
    fn from(e: PsychometricError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<EfaError> for CliError {
    fn from(e: EfaError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        CliError::Domain(e.to_string())
    }
}

/// File contents with their SHA-256 digest.
pub struct Source {
    pub text: String,
    pub sha256: String,
}

pub fn read_source(path: &Path) -> Result<Source, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8(bytes).map_err(|_| CliError::Usage(format!("{} is not UTF-8", path.display())))?;
    Ok(Source { text, sha256 })
}

pub fn load_model(path: &Path) -> Result<(ModelSpec, Source), CliError> {
    let src = read_source(path)?;
    let spec = parse_model(&src.text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((spec, src))
}

pub fn load_data(path: &Path, options: &LoadOptions) -> Result<(Dataset, Source), CliError> {
    let src = read_source(path)?;
    let data = latentpath::data::parse_table(&src.text, options)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((data, src))
}

/// Columns of `data` named in `wanted`, kept in table order.
pub fn subset(data: &Dataset, wanted: &[&str]) -> Result<Dataset, CliError> {
    for w in wanted {
        data.column_index(w)?;
    }
    let order: Vec<String> = data.names.iter().filter(|n| wanted.contains(&n.as_str())).cloned().collect();
    Ok(data.select(&order)?)
}

/// Unbiased covariance of the model indicators over complete rows.
pub fn moments_for(spec: &ModelSpec, data: &Dataset) -> Result<SampleMoments, CliError> {
    Ok(covariance(&subset(data, &spec.indicators())?, Divisor::NMinusOne)?)
}

pub fn parse_delimiter(text: &str, tab: bool) -> Result<u8, CliError> {
    if tab {
        return Ok(b'\t');
    }
    match text.as_bytes() {
        [b] => Ok(*b),
        _ if text == "\\t" => Ok(b'\t'),
        _ => Err(CliError::Usage(format!("delimiter must be a single byte, got {text:?}"))),
    }
}
