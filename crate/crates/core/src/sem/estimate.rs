use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SampleMoments;
use crate::model::{build_matrices, count_df, BuildOptions, Entry, Identification, ModelSpec, ParamKind, ParamMatrices};
use crate::report::matrix_serde;
use crate::stats;

use super::engine::MlObjective;
use super::optimizer::{self, BfgsSettings};
use super::standardize::{standardized_solution, StandardizedEstimate};
use super::SemError;

/// Multiplier turning the minimised discrepancy into a chi-square statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChiSquareMultiplier {
    #[default]
    NMinusOne,
    N,
}

impl ChiSquareMultiplier {
    pub fn value(self, n: usize) -> f64 {
        match self {
            ChiSquareMultiplier::NMinusOne => n as f64 - 1.0,
            ChiSquareMultiplier::N => n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub max_iter: usize,
    pub gtol: f64,
    pub ftol: f64,
    pub multiplier: ChiSquareMultiplier,
    pub identification: Identification,
    /// Explicit start vector; `None` uses the default start-value rule.
    pub start: Option<Vec<f64>>,
    /// Compute standard errors from the numerical Hessian.
    pub standard_errors: bool,
    pub seed: u64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            max_iter: 500,
            gtol: 1e-6,
            ftol: 1e-14,
            multiplier: ChiSquareMultiplier::NMinusOne,
            identification: Identification::Marker,
            start: None,
            standard_errors: true,
            seed: 0,
        }
    }
}

impl EstimationOptions {
    fn validate(&self) -> Result<(), SemError> {
        if self.gtol.is_nan() || self.ftol.is_nan() || self.gtol <= 0.0 || self.ftol <= 0.0 {
            return Err(SemError::InvalidOptions("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(SemError::InvalidOptions("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterEstimate {
    pub label: String,
    pub lhs: String,
    pub op: String,
    pub rhs: String,
    pub kind: ParamKind,
    pub estimate: f64,
    pub se: Option<f64>,
    /// Critical ratio, estimate / SE.
    pub z: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub variables: Vec<String>,
    pub n: usize,
    pub estimates: Vec<ParameterEstimate>,
    pub theta: Vec<f64>,
    pub f_min: f64,
    pub chisq: f64,
    pub chisq_multiplier: f64,
    pub df: i64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Labels of variance parameters estimated below zero.
    pub heywood: Vec<String>,
    pub standardized: Vec<StandardizedEstimate>,
    #[serde(with = "matrix_serde")]
    pub implied: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub sample: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    #[serde(skip)]
    pub param_cov: Option<DMatrix<f64>>,
    #[serde(skip)]
    pub model: ParamMatrices,
}

impl FitResult {
    pub fn estimate(&self, label: &str) -> Option<&ParameterEstimate> {
        self.estimates.iter().find(|e| e.label == label)
    }

    /// Estimate of the free parameter `lhs op rhs`.
    pub fn find(&self, lhs: &str, op: &str, rhs: &str) -> Option<&ParameterEstimate> {
        self.estimates
            .iter()
            .find(|e| e.op == op && ((e.lhs == lhs && e.rhs == rhs) || (op == "~~" && e.lhs == rhs && e.rhs == lhs)))
    }
}

/// Default start vector: loadings 0.7, paths and covariances 0, error
/// variances half the observed variance, latent variances half the
/// marker's observed variance (rescaled by the marker loading).
pub fn start_values(model: &ParamMatrices, sample: &DMatrix<f64>) -> Vec<f64> {
    let var_of = |name: &str| {
        let i = model.observed.iter().position(|o| o == name).expect("observed variable");
        sample[(i, i)]
    };
    let marker_variance = |latent: &str| -> f64 {
        let fixed = model
            .parameters
            .iter()
            .find(|p| p.kind == ParamKind::Loading && p.lhs == latent && p.free.is_none() && p.value != 0.0);
        match fixed {
            Some(p) => 0.5 * var_of(&p.rhs) / (p.value * p.value),
            None => 1.0,
        }
    };
    let mut theta = vec![0.0; model.n_free()];
    for p in model.free_parameters() {
        let k = p.free.expect("free parameter");
        theta[k] = match p.kind {
            ParamKind::Loading => 0.7,
            ParamKind::Regression => 0.0,
            ParamKind::LatentVariance | ParamKind::DisturbanceVariance => marker_variance(&p.lhs),
            ParamKind::ErrorVariance => 0.5 * var_of(&p.lhs),
            ParamKind::LatentCovariance | ParamKind::DisturbanceCovariance | ParamKind::ErrorCovariance => 0.0,
        };
    }
    theta
}

/// Fits `spec` to the sample moments by maximum likelihood.
///
/// Observed variables are taken in the order they appear in `moments`;
/// variables not named by the model are ignored.
pub fn fit(spec: &ModelSpec, moments: &SampleMoments, opts: &EstimationOptions) -> Result<FitResult, SemError> {
    let wanted: Vec<&str> = spec.indicators();
    for w in &wanted {
        if !moments.names.iter().any(|n| n == w) {
            return Err(crate::data::DataError::UnknownVariable(w.to_string()).into());
        }
    }
    let order: Vec<String> = moments
        .names
        .iter()
        .filter(|n| wanted.contains(&n.as_str()))
        .cloned()
        .collect();
    let model = build_matrices(
        spec,
        &order,
        BuildOptions {
            identification: opts.identification,
        },
    )?;
    let selected = moments.select(&order)?;
    fit_matrices(&model, &selected.cov, selected.n, opts)
}

/// Fits compiled matrices to a covariance matrix already in the model's
/// observed order.
pub fn fit_matrices(
    model: &ParamMatrices,
    sample: &DMatrix<f64>,
    n: usize,
    opts: &EstimationOptions,
) -> Result<FitResult, SemError> {
    opts.validate()?;
    let p = model.n_observed();
    let dof = count_df(model, p);
    if dof.under_identified() {
        return Err(SemError::UnderIdentified {
            moments: dof.moments,
            parameters: dof.parameters,
            df: dof.df,
        });
    }
    let objective = MlObjective::new(model, sample)?;
    let x0 = match &opts.start {
        Some(s) if s.len() != model.n_free() => {
            return Err(SemError::ParameterLength {
                expected: model.n_free(),
                found: s.len(),
            })
        }
        Some(s) => s.clone(),
        None => start_values(model, sample),
    };
    let settings = BfgsSettings {
        max_iter: opts.max_iter,
        gtol: opts.gtol,
        ftol: opts.ftol,
    };
    let report = optimizer::minimize(|t| objective.value_and_gradient(t), &x0, &settings)
        .ok_or(SemError::ImpliedNotPositiveDefinite)?;

    let theta = report.x;
    let multiplier = opts.multiplier.value(n);
    let f_min = report.f.max(0.0);
    let gradient_norm = report.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));

    let param_cov = if opts.standard_errors {
        parameter_covariance(&objective, &theta, multiplier)
    } else {
        None
    };
    let free = model.free_parameters();
    let estimates: Vec<ParameterEstimate> = free
        .iter()
        .map(|fp| {
            let k = fp.free.expect("free parameter");
            let estimate = theta[k];
            let se = param_cov
                .as_ref()
                .map(|c| c[(k, k)])
                .filter(|v| *v > 0.0 && v.is_finite())
                .map(f64::sqrt);
            let z = se.map(|s| estimate / s);
            ParameterEstimate {
                label: fp.label.clone(),
                lhs: fp.lhs.clone(),
                op: fp.relation.symbol().to_string(),
                rhs: fp.rhs.clone(),
                kind: fp.kind,
                estimate,
                se,
                z,
                p: z.map(stats::normal_two_sided),
            }
        })
        .collect();
    let heywood = free
        .iter()
        .filter(|fp| fp.kind.is_variance() && theta[fp.free.expect("free")] < 0.0)
        .map(|fp| fp.label.clone())
        .collect();

    let implied = objective.engine().evaluate(&theta)?.sigma;
    let standardized = standardized_solution(model, &theta).unwrap_or_default();

    Ok(FitResult {
        variables: model.observed.clone(),
        n,
        estimates,
        theta,
        f_min,
        chisq: multiplier * f_min,
        chisq_multiplier: multiplier,
        df: dof.df,
        iterations: report.iterations,
        gradient_norm,
        converged: report.converged,
        heywood,
        standardized,
        implied,
        sample: sample.clone(),
        objective_trace: report.trace,
        param_cov,
        model: model.clone(),
    })
}

/// Inverse of the numerically differentiated Hessian of
/// `(multiplier / 2) * F_ML`.
fn parameter_covariance(objective: &MlObjective, theta: &[f64], multiplier: f64) -> Option<DMatrix<f64>> {
    let t = theta.len();
    let mut hess = DMatrix::zeros(t, t);
    for i in 0..t {
        let h = 1e-5 * theta[i].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[i] += h;
        down[i] -= h;
        let (_, gu) = objective.value_and_gradient(&up)?;
        let (_, gd) = objective.value_and_gradient(&down)?;
        for j in 0..t {
            hess[(i, j)] = (gu[j] - gd[j]) / (2.0 * h);
        }
    }
    crate::linalg::symmetrize(&mut hess);
    let info = hess * (multiplier / 2.0);
    info.try_inverse()
}

/// Value of every free or fixed entry at `theta`, keyed like
/// [`crate::model::ModelParameter::label`].
pub(crate) fn entry_value(entry: Entry, theta: &[f64]) -> f64 {
    match entry {
        Entry::Fixed(v) => v,
        Entry::Free(k) => theta[k],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    #[test]
    fn saturated_model_fits_exactly() {
        let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.42, 0.56, 0.42, 1.0, 0.48, 0.56, 0.48, 1.0]);
        let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
        let moments = SampleMoments::from_covariance(names, s, 200).unwrap();
        let r = fit(&spec, &moments, &EstimationOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.df, 0);
        assert!(r.f_min < 1e-10);
        assert!(r.chisq < 1e-10 * 199.0);
        // one-factor closed form: lambda2 = s23/s13 = 0.857..., lambda3 = s23/s12
        let l2 = r.find("F", "=~", "x2").unwrap().estimate;
        assert!((l2 - 0.48 / 0.56).abs() < 1e-5);
        assert!(r.estimates.iter().all(|e| e.se.is_some()));
    }

    #[test]
    fn under_identified_is_an_error() {
        let spec = parse_model("F =~ x1 + x2").unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let moments = SampleMoments::from_covariance(vec!["x1".into(), "x2".into()], s, 100).unwrap();
        assert!(matches!(
            fit(&spec, &moments, &EstimationOptions::default()),
            Err(SemError::UnderIdentified { df: -1, .. })
        ));
    }

    #[test]
    fn non_pd_sample_rejected() {
        let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
        let moments = SampleMoments::from_covariance(names, s, 100).unwrap();
        assert!(matches!(
            fit(&spec, &moments, &EstimationOptions::default()),
            Err(SemError::SampleNotPositiveDefinite)
        ));
    }

    #[test]
    fn invalid_tolerance() {
        let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
        let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
        let moments = SampleMoments::from_covariance(names, DMatrix::identity(3, 3), 100).unwrap();
        let opts = EstimationOptions {
            gtol: 0.0,
            ..EstimationOptions::default()
        };
        assert!(matches!(fit(&spec, &moments, &opts), Err(SemError::InvalidOptions(_))));
    }
}
