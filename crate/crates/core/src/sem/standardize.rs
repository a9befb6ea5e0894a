use nalgebra::DMatrix;
use serde::Serialize;

use crate::model::{ParamKind, ParamMatrices};

use super::engine::Engine;
use super::estimate::{entry_value, FitResult};
use super::SemError;

/// A parameter rescaled by model-implied standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardizedEstimate {
    pub label: String,
    pub lhs: String,
    pub op: String,
    pub rhs: String,
    pub kind: ParamKind,
    pub free: bool,
    pub estimate: f64,
    pub std: f64,
}

/// Implied covariance of the latents, ordered endogenous then exogenous.
pub fn latent_covariance(model: &ParamMatrices, theta: &[f64]) -> Result<(Vec<String>, DMatrix<f64>), SemError> {
    let ev = Engine::new(model).evaluate(theta)?;
    Ok((model.latents(), ev.latent_cov))
}

/// Standardized value of every free parameter and every non-zero fixed one.
pub fn standardized_solution(model: &ParamMatrices, theta: &[f64]) -> Result<Vec<StandardizedEstimate>, SemError> {
    let ev = Engine::new(model).evaluate(theta)?;
    let latents = model.latents();
    let latent_sd = |name: &str| -> Result<f64, SemError> {
        let i = latents.iter().position(|l| l == name).expect("latent");
        positive_sd(ev.latent_cov[(i, i)], name)
    };
    let observed_sd = |name: &str| -> Result<f64, SemError> {
        let i = model.observed.iter().position(|o| o == name).expect("observed");
        positive_sd(ev.sigma[(i, i)], name)
    };

    let mut out = Vec::new();
    for p in &model.parameters {
        let estimate = entry_value(model.matrix(p.matrix).get(p.row, p.col), theta);
        let std = match p.kind {
            ParamKind::Loading => estimate * latent_sd(&p.lhs)? / observed_sd(&p.rhs)?,
            ParamKind::Regression => estimate * latent_sd(&p.rhs)? / latent_sd(&p.lhs)?,
            ParamKind::LatentVariance
            | ParamKind::LatentCovariance
            | ParamKind::DisturbanceVariance
            | ParamKind::DisturbanceCovariance => estimate / (latent_sd(&p.lhs)? * latent_sd(&p.rhs)?),
            ParamKind::ErrorVariance | ParamKind::ErrorCovariance => {
                estimate / (observed_sd(&p.lhs)? * observed_sd(&p.rhs)?)
            }
        };
        out.push(StandardizedEstimate {
            label: p.label.clone(),
            lhs: p.lhs.clone(),
            op: p.relation.symbol().to_string(),
            rhs: p.rhs.clone(),
            kind: p.kind,
            free: p.free.is_some(),
            estimate,
            std,
        });
    }
    Ok(out)
}

fn positive_sd(var: f64, name: &str) -> Result<f64, SemError> {
    if var > 0.0 && var.is_finite() {
        Ok(var.sqrt())
    } else {
        Err(SemError::NonPositiveVariance { name: name.to_string() })
    }
}

/// Standardized solution of a fitted model.
pub fn standardize(result: &FitResult, model: &ParamMatrices) -> Result<Vec<StandardizedEstimate>, SemError> {
    standardized_solution(model, &result.theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_matrices, parse_model, BuildOptions};

    #[test]
    fn marker_loading_rescaled() {
        // lambda = 1, latent variance 0.64, error variance 0.36 -> indicator variance 1.0
        let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
        let order: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
        let m = build_matrices(&spec, &order, BuildOptions::default()).unwrap();
        // free: l2, l3, phi, th1, th2, th3
        let theta = [1.0, 1.0, 0.64, 0.36, 0.36, 0.36];
        let sol = standardized_solution(&m, &theta).unwrap();
        let marker = sol.iter().find(|s| s.rhs == "x1" && s.op == "=~").unwrap();
        assert!(!marker.free);
        assert!((marker.std - 0.8).abs() < 1e-12);
    }

    #[test]
    fn unit_scale_model_unchanged() {
        let spec = parse_model("F =~ x1 + x2 + x3\nG =~ y1 + y2 + y3\nG ~ F").unwrap();
        let order: Vec<String> = ["x1", "x2", "x3", "y1", "y2", "y3"].iter().map(|s| s.to_string()).collect();
        let m = build_matrices(
            &spec,
            &order,
            BuildOptions {
                identification: crate::model::Identification::UnitVariance,
            },
        )
        .unwrap();
        // Loadings l with error 1 - l^2; G disturbance fixed at 1 so scale G by hand:
        // choose beta = 0 so every latent has unit variance.
        let mut theta = vec![0.0; m.n_free()];
        for p in m.free_parameters() {
            let k = p.free.unwrap();
            theta[k] = match p.kind {
                ParamKind::Loading => 0.6,
                ParamKind::ErrorVariance => 1.0 - 0.36,
                _ => 0.0,
            };
        }
        let sol = standardized_solution(&m, &theta).unwrap();
        for s in sol {
            assert!((s.std - s.estimate).abs() < 1e-12, "{} {} {}", s.label, s.estimate, s.std);
        }
    }

    #[test]
    fn nonpositive_variance_error() {
        let spec = parse_model("F =~ x1 + x2 + x3").unwrap();
        let order: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
        let m = build_matrices(&spec, &order, BuildOptions::default()).unwrap();
        let theta = [1.0, 1.0, -0.5, 0.1, 0.1, 0.1];
        assert!(matches!(
            standardized_solution(&m, &theta),
            Err(SemError::NonPositiveVariance { .. })
        ));
    }
}
