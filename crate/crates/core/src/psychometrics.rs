//! Reliability and validity statistics.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsychometricError {
    #[error("need at least {needed} {what}, found {found}")]
    TooFew { what: &'static str, needed: usize, found: usize },
    #[error("rows have unequal length")]
    Ragged,
    #[error("total score has zero variance")]
    ZeroTotalVariance,
    #[error("input is empty")]
    Empty,
    #[error("length mismatch: {0} loadings vs {1} error variances")]
    LengthMismatch(usize, usize),
    #[error("correlation matrix is singular")]
    Singular,
    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("KMO is undefined: all off-diagonal correlations are zero")]
    UndefinedKmo,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need n > p (n = {n}, p = {p})")]
    SampleTooSmall { n: usize, p: usize },
}

fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Cronbach's alpha of an `n x k` block of item scores (rows are
/// respondents).
pub fn cronbach_alpha(items: &[Vec<f64>]) -> Result<f64, PsychometricError> {
    let n = items.len();
    if n < 2 {
        return Err(PsychometricError::TooFew { what: "rows", needed: 2, found: n });
    }
    let k = items[0].len();
    if items.iter().any(|r| r.len() != k) {
        return Err(PsychometricError::Ragged);
    }
    if k < 2 {
        return Err(PsychometricError::TooFew { what: "items", needed: 2, found: k });
    }
    let item_var: f64 = (0..k).map(|j| variance(items.iter().map(move |r| r[j]))).sum();
    let total_var = variance(items.iter().map(|r| r.iter().sum::<f64>()));
    if total_var <= 0.0 {
        return Err(PsychometricError::ZeroTotalVariance);
    }
    let kf = k as f64;
    Ok(kf / (kf - 1.0) * (1.0 - item_var / total_var))
}

fn check_pairs(loadings: &[f64], error_vars: &[f64]) -> Result<(), PsychometricError> {
    if loadings.is_empty() {
        return Err(PsychometricError::Empty);
    }
    if loadings.len() != error_vars.len() {
        return Err(PsychometricError::LengthMismatch(loadings.len(), error_vars.len()));
    }
    Ok(())
}

/// Error variances `1 - lambda^2` implied by standardized loadings.
pub fn standardized_error_variances(loadings: &[f64]) -> Vec<f64> {
    loadings.iter().map(|l| 1.0 - l * l).collect()
}

/// `(sum l)^2 / ((sum l)^2 + sum var(e))`
pub fn composite_reliability(loadings: &[f64], error_vars: &[f64]) -> Result<f64, PsychometricError> {
    check_pairs(loadings, error_vars)?;
    let s: f64 = loadings.iter().sum();
    let e: f64 = error_vars.iter().sum();
    Ok(s * s / (s * s + e))
}

/// `sum l^2 / (sum l^2 + sum var(e))`
pub fn average_variance_extracted(loadings: &[f64], error_vars: &[f64]) -> Result<f64, PsychometricError> {
    check_pairs(loadings, error_vars)?;
    let s: f64 = loadings.iter().map(|l| l * l).sum();
    let e: f64 = error_vars.iter().sum();
    Ok(s / (s + e))
}

/// Reliability summary for one construct.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructReliability {
    pub construct: String,
    pub items: Vec<String>,
    pub alpha: Option<f64>,
    pub loadings: Vec<f64>,
    pub error_variances: Vec<f64>,
    pub cr: f64,
    pub ave: f64,
}

impl ConstructReliability {
    /// CR and AVE from standardized loadings with `1 - lambda^2` errors.
    pub fn from_standardized(
        construct: impl Into<String>,
        items: Vec<String>,
        loadings: Vec<f64>,
        alpha: Option<f64>,
    ) -> Result<Self, PsychometricError> {
        let error_variances = standardized_error_variances(&loadings);
        Ok(ConstructReliability {
            construct: construct.into(),
            items,
            alpha,
            cr: composite_reliability(&loadings, &error_variances)?,
            ave: average_variance_extracted(&loadings, &error_variances)?,
            loadings,
            error_variances,
        })
    }
}

/// Kaiser-Meyer-Olkin measure of sampling adequacy.
pub fn kmo(r: &DMatrix<f64>) -> Result<f64, PsychometricError> {
    if !r.is_square() || r.nrows() < 2 {
        return Err(PsychometricError::Dimension("KMO needs a square matrix of size >= 2".into()));
    }
    let inv = r.clone().try_inverse().ok_or(PsychometricError::Singular)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(PsychometricError::Singular);
    }
    let p = r.nrows();
    let mut sum_r = 0.0;
    let mut sum_q = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                sum_r += r[(i, j)].powi(2);
                let q = -inv[(i, j)] / (inv[(i, i)] * inv[(j, j)]).sqrt();
                sum_q += q * q;
            }
        }
    }
    if sum_r + sum_q == 0.0 || sum_r == 0.0 {
        return Err(PsychometricError::UndefinedKmo);
    }
    Ok(sum_r / (sum_r + sum_q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BartlettResult {
    pub chi_square: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Bartlett's test of sphericity on a correlation matrix.
pub fn bartlett(r: &DMatrix<f64>, n: usize) -> Result<BartlettResult, PsychometricError> {
    let p = r.nrows();
    if !r.is_square() || p < 2 {
        return Err(PsychometricError::Dimension("Bartlett needs a square matrix of size >= 2".into()));
    }
    if n <= p {
        return Err(PsychometricError::SampleTooSmall { n, p });
    }
    let log_det = linalg::log_det_spd(r).ok_or(PsychometricError::NotPositiveDefinite)?;
    let factor = n as f64 - 1.0 - (2.0 * p as f64 + 5.0) / 6.0;
    // |R| <= 1 for correlation matrices; clamp rounding noise.
    let chi_square = (-factor * log_det).max(0.0);
    let df = (p * (p - 1)) as f64 / 2.0;
    Ok(BartlettResult {
        chi_square,
        df,
        p_value: stats::chi_square_sf(chi_square, df),
    })
}

/// Fornell-Larcker table: sqrt(AVE) on the diagonal, correlations below.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FornellLarcker {
    pub constructs: Vec<String>,
    pub sqrt_ave: Vec<f64>,
    /// Full correlation matrix as given (row-major).
    pub correlations: Vec<Vec<f64>>,
    /// Largest absolute correlation with any other construct.
    pub max_correlation: Vec<f64>,
    pub passes: Vec<bool>,
}

pub fn fornell_larcker(
    constructs: &[String],
    ave: &[f64],
    corr: &DMatrix<f64>,
) -> Result<FornellLarcker, PsychometricError> {
    let k = constructs.len();
    if ave.len() != k || corr.nrows() != k || corr.ncols() != k {
        return Err(PsychometricError::Dimension(format!(
            "{k} constructs, {} AVE values, {}x{} correlation matrix",
            ave.len(),
            corr.nrows(),
            corr.ncols()
        )));
    }
    let sqrt_ave: Vec<f64> = ave.iter().map(|a| a.sqrt()).collect();
    let max_correlation: Vec<f64> = (0..k)
        .map(|i| (0..k).filter(|&j| j != i).map(|j| corr[(i, j)].abs()).fold(0.0, f64::max))
        .collect();
    let passes = (0..k).map(|i| sqrt_ave[i] > max_correlation[i]).collect();
    Ok(FornellLarcker {
        constructs: constructs.to_vec(),
        sqrt_ave,
        correlations: linalg::to_rows(corr),
        max_correlation,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_identical_columns() {
        let rows: Vec<Vec<f64>> = [1.0, 3.0, 2.0, 5.0, 4.0].iter().map(|&v| vec![v, v, v]).collect();
        assert!((cronbach_alpha(&rows).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_orthogonal_columns() {
        // Columns of a 4x4 Hadamard matrix (minus the constant one) are
        // mutually uncorrelated with equal variance.
        let rows = vec![
            vec![1.0, 1.0, 1.0],
            vec![-1.0, 1.0, -1.0],
            vec![1.0, -1.0, -1.0],
            vec![-1.0, -1.0, 1.0],
        ];
        assert!(cronbach_alpha(&rows).unwrap().abs() < 1e-12);
    }

    #[test]
    fn alpha_errors() {
        assert!(matches!(
            cronbach_alpha(&[vec![1.0, 2.0]]),
            Err(PsychometricError::TooFew { what: "rows", .. })
        ));
        assert!(matches!(
            cronbach_alpha(&[vec![1.0], vec![2.0]]),
            Err(PsychometricError::TooFew { what: "items", .. })
        ));
        assert!(matches!(
            cronbach_alpha(&[vec![1.0, -1.0], vec![2.0, -2.0]]),
            Err(PsychometricError::ZeroTotalVariance)
        ));
    }

    #[test]
    fn cr_ave_limits_and_errors() {
        assert_eq!(composite_reliability(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(average_variance_extracted(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(composite_reliability(&[], &[]), Err(PsychometricError::Empty)));
        assert!(matches!(
            average_variance_extracted(&[0.5], &[0.1, 0.2]),
            Err(PsychometricError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn kmo_identity_is_undefined() {
        assert!(matches!(kmo(&DMatrix::identity(4, 4)), Err(PsychometricError::UndefinedKmo)));
        let singular = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(kmo(&singular), Err(PsychometricError::Singular)));
    }

    #[test]
    fn bartlett_identity_and_two_by_two() {
        let b = bartlett(&DMatrix::identity(3, 3), 50).unwrap();
        assert_eq!(b.chi_square, 0.0);
        assert_eq!(b.p_value, 1.0);
        assert_eq!(b.df, 3.0);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let b = bartlett(&r, 100).unwrap();
        let expected = -(99.0 - 1.5) * 0.75f64.ln();
        assert!((b.chi_square - expected).abs() < 1e-12);
        assert!((b.chi_square - 28.049).abs() < 1e-3);
        assert_eq!(b.df, 1.0);
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        assert!(matches!(bartlett(&not_pd, 100), Err(PsychometricError::NotPositiveDefinite)));
    }

    #[test]
    fn fornell_larcker_flags() {
        let names: Vec<String> = vec!["PerVa".into(), "EnvSt".into()];
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.786, 0.786, 1.0]);
        let fl = fornell_larcker(&names, &[0.3913, 0.4183], &corr).unwrap();
        assert!((fl.sqrt_ave[0] - 0.626).abs() < 1e-3);
        assert_eq!(fl.passes, vec![false, false]);
        assert!(fornell_larcker(&names, &[0.5], &corr).is_err());
    }
}
