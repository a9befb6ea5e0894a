//! Goodness-of-fit indices against the independence baseline.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::sem::FitResult;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("sample covariance matrix is not positive definite")]
    SampleNotPositiveDefinite,
    #[error("implied covariance matrix is singular")]
    SingularImplied,
    #[error("matrix dimensions disagree: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Baseline {
    pub chisq: f64,
    pub df: f64,
    pub f_null: f64,
}

/// Independence model: free variances, all covariances zero.
pub fn baseline(s: &DMatrix<f64>, multiplier: f64) -> Result<Baseline, IndexError> {
    let p = s.nrows();
    let log_det = linalg::log_det_spd(s).ok_or(IndexError::SampleNotPositiveDefinite)?;
    let sum_log_diag: f64 = (0..p).map(|i| s[(i, i)].ln()).sum();
    // Hadamard: sum log s_ii >= log|S|; clamp rounding noise.
    let f_null = (sum_log_diag - log_det).max(0.0);
    Ok(Baseline {
        chisq: multiplier * f_null,
        df: (p * (p - 1)) as f64 / 2.0,
        f_null,
    })
}

/// Thresholds for the pass flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Standards {
    pub chisq_df_below: f64,
    pub rmsea_below: f64,
    pub incremental_above: f64,
    pub parsimony_above: f64,
    pub p_below: f64,
}

impl Default for Standards {
    fn default() -> Self {
        Standards {
            chisq_df_below: 5.0,
            rmsea_below: 0.08,
            incremental_above: 0.9,
            parsimony_above: 0.5,
            p_below: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexValue {
    pub name: &'static str,
    /// `None` when the index is undefined for this input.
    pub value: Option<f64>,
    pub standard: String,
    pub meets: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitIndexReport {
    pub n: usize,
    pub p: usize,
    pub chisq: f64,
    pub df: f64,
    pub chisq_df: Option<f64>,
    pub p_value: f64,
    pub rmsea: Option<f64>,
    pub gfi: Option<f64>,
    pub agfi: Option<f64>,
    pub nfi: Option<f64>,
    pub tli: Option<f64>,
    pub cfi: Option<f64>,
    pub pnfi: Option<f64>,
    pub pcfi: Option<f64>,
    pub pgfi: Option<f64>,
    pub chisq_null: f64,
    pub df_null: f64,
    /// Rows of the summary table, in display order.
    pub table: Vec<IndexValue>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    if den != 0.0 && den.is_finite() {
        Some(num / den).filter(|v| v.is_finite())
    } else {
        None
    }
}

/// Goodness-of-fit indices from the model and baseline statistics.
///
/// `s` and `implied` must share variable order. Undefined indices (zero
/// denominators) come back as `None` rather than an error.
#[allow(clippy::too_many_arguments)]
pub fn indices(
    chisq: f64,
    df: f64,
    chisq_null: f64,
    df_null: f64,
    n: usize,
    s: &DMatrix<f64>,
    implied: &DMatrix<f64>,
    standards: &Standards,
) -> Result<FitIndexReport, IndexError> {
    let p = s.nrows();
    if !s.is_square() || implied.shape() != s.shape() {
        return Err(IndexError::Dimension(format!(
            "S is {}x{}, implied is {}x{}",
            s.nrows(),
            s.ncols(),
            implied.nrows(),
            implied.ncols()
        )));
    }
    let moments = (p * (p + 1)) as f64 / 2.0;
    let excess = (chisq - df).max(0.0);
    let excess_null = (chisq_null - df_null).max(0.0);

    let chisq_df = ratio(chisq, df);
    let rmsea = if df > 0.0 && n > 1 {
        Some((excess / (df * (n as f64 - 1.0))).sqrt())
    } else {
        None
    };
    let cfi = if df_null > 0.0 {
        if chisq_null <= df_null {
            Some(1.0)
        } else {
            Some((1.0 - excess / excess_null).clamp(0.0, 1.0))
        }
    } else {
        None
    };
    let nfi = ratio(chisq_null - chisq, chisq_null).map(|v| v.clamp(0.0, 1.0));
    let tli = match (ratio(chisq_null, df_null), chisq_df) {
        (Some(null_ratio), Some(model_ratio)) => ratio(null_ratio - model_ratio, null_ratio - 1.0),
        _ => None,
    };

    let inv = implied.clone().try_inverse().ok_or(IndexError::SingularImplied)?;
    let a = &inv * s;
    let resid = &a - DMatrix::identity(p, p);
    let gfi = ratio((&resid * &resid).trace(), (&a * &a).trace()).map(|r| 1.0 - r);
    let agfi = gfi.and_then(|g| ratio(moments, df).map(|k| 1.0 - (1.0 - g) * k));
    let parsimony = ratio(df, df_null);
    let pnfi = parsimony.zip(nfi).map(|(k, v)| k * v);
    let pcfi = parsimony.zip(cfi).map(|(k, v)| k * v);
    let pgfi = ratio(df, moments).zip(gfi).map(|(k, v)| k * v);
    let p_value = if df > 0.0 { stats::chi_square_sf(chisq, df) } else { 1.0 };

    let above = |v: Option<f64>, t: f64| v.map(|x| x > t);
    let below = |v: Option<f64>, t: f64| v.map(|x| x < t);
    let st = standards;
    let inc = format!(">{}", st.incremental_above);
    let par = format!(">{}", st.parsimony_above);
    let table = vec![
        IndexValue { name: "CMIN/DF", value: chisq_df, standard: format!("<{}", st.chisq_df_below), meets: below(chisq_df, st.chisq_df_below) },
        IndexValue { name: "P", value: Some(p_value), standard: format!("<{}", st.p_below), meets: below(Some(p_value), st.p_below) },
        IndexValue { name: "RMSEA", value: rmsea, standard: format!("<{}", st.rmsea_below), meets: below(rmsea, st.rmsea_below) },
        IndexValue { name: "GFI", value: gfi, standard: inc.clone(), meets: above(gfi, st.incremental_above) },
        IndexValue { name: "AGFI", value: agfi, standard: inc.clone(), meets: above(agfi, st.incremental_above) },
        IndexValue { name: "TLI", value: tli, standard: inc.clone(), meets: above(tli, st.incremental_above) },
        IndexValue { name: "NFI", value: nfi, standard: inc.clone(), meets: above(nfi, st.incremental_above) },
        IndexValue { name: "CFI", value: cfi, standard: inc, meets: above(cfi, st.incremental_above) },
        IndexValue { name: "PNFI", value: pnfi, standard: par.clone(), meets: above(pnfi, st.parsimony_above) },
        IndexValue { name: "PCFI", value: pcfi, standard: par.clone(), meets: above(pcfi, st.parsimony_above) },
        IndexValue { name: "PGFI", value: pgfi, standard: par, meets: above(pgfi, st.parsimony_above) },
    ];

    Ok(FitIndexReport {
        n,
        p,
        chisq,
        df,
        chisq_df,
        p_value,
        rmsea,
        gfi,
        agfi,
        nfi,
        tli,
        cfi,
        pnfi,
        pcfi,
        pgfi,
        chisq_null,
        df_null,
        table,
    })
}

/// Full index suite for a fitted model.
pub fn fit_indices(result: &FitResult, standards: &Standards) -> Result<FitIndexReport, IndexError> {
    let base = baseline(&result.sample, result.chisq_multiplier)?;
    indices(
        result.chisq,
        result.df as f64,
        base.chisq,
        base.df,
        result.n,
        &result.sample,
        &result.implied,
        standards,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s2(r: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0])
    }

    #[test]
    fn baseline_closed_form() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0, 0.5]));
        assert!(baseline(&d, 100.0).unwrap().chisq.abs() < 1e-12);
        let b = baseline(&s2(0.5), 100.0).unwrap();
        assert!((b.f_null + (1.0f64 - 0.25).ln()).abs() < 1e-12);
        assert!((b.chisq - 28.77).abs() < 5e-3);
        assert_eq!(b.df, 1.0);
    }

    #[test]
    fn rmsea_from_ratio() {
        let s = DMatrix::identity(3, 3);
        for df in [10.0, 179.0, 500.0] {
            let r = indices(2.727 * df, df, 5000.0, 3.0, 519, &s, &s, &Standards::default()).unwrap();
            assert!((r.rmsea.unwrap() - (1.727f64 / 518.0).sqrt()).abs() < 1e-12);
            assert!((r.rmsea.unwrap() - 0.058).abs() < 5e-4);
        }
    }

    #[test]
    fn perfect_fit() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.5]);
        let r = indices(1.0, 1.0, 100.0, 3.0, 200, &s, &s, &Standards::default()).unwrap();
        assert_eq!(r.rmsea, Some(0.0));
        assert_eq!(r.cfi, Some(1.0));
        assert!((r.gfi.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.agfi.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cfi_guard_and_undefined() {
        let s = DMatrix::identity(2, 2);
        let r = indices(0.5, 1.0, 0.5, 1.0, 50, &s, &s, &Standards::default()).unwrap();
        assert_eq!(r.cfi, Some(1.0));
        let r = indices(0.0, 0.0, 0.0, 1.0, 50, &s, &s, &Standards::default()).unwrap();
        assert_eq!(r.rmsea, None);
        assert_eq!(r.chisq_df, None);
        assert_eq!(r.nfi, None);
        assert_eq!(r.tli, None);
    }

    #[test]
    fn pass_flags() {
        let s = DMatrix::identity(3, 3);
        let r = indices(2.727 * 179.0, 179.0, 4000.0, 210.0, 519, &s, &s, &Standards::default()).unwrap();
        let row = |name: &str| r.table.iter().find(|v| v.name == name).unwrap().clone();
        assert_eq!(row("CMIN/DF").meets, Some(true));
        assert_eq!(row("RMSEA").meets, Some(true));
        assert_eq!(row("P").meets, Some(true));
        assert_eq!(row("GFI").standard, ">0.9");
    }
}
