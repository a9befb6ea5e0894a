//! Parameter values for `simulate`, read from TOML.
//!
//! ```toml
//! n = 519
//! seed = 7
//!
//! [defaults]
//! loading = 0.9
//!
//! [parameters]
//! "PerVa ~ EnvSt" = 0.587
//! H1 = 0.156
//! ```
//!
//! Parameter keys are user labels or `lhs op rhs` (whitespace ignored).
//! Parameters not listed take the default for their kind.

use std::collections::{BTreeMap, BTreeSet};

use latentpath::model::{ParamKind, ParamMatrices};
use serde::{Deserialize, Serialize};

use crate::input::CliError;

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub loading: f64,
    pub regression: f64,
    pub error_variance: f64,
    pub latent_variance: f64,
    pub disturbance_variance: f64,
    pub latent_covariance: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            loading: 1.0,
            regression: 0.0,
            error_variance: 0.5,
            latent_variance: 1.0,
            disturbance_variance: 0.5,
            latent_covariance: 0.0,
        }
    }
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<SimConfig, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("simulation config: {e}")))
    }

    /// Free-parameter vector for `model`; every key must match a free parameter.
    pub fn theta(&self, model: &ParamMatrices) -> Result<Vec<f64>, CliError> {
        let compact = |s: &str| s.split_whitespace().collect::<String>();
        let given: BTreeMap<String, (&String, f64)> =
            self.parameters.iter().map(|(k, v)| (compact(k), (k, *v))).collect();
        let mut used = BTreeSet::new();
        let mut theta = vec![0.0; model.n_free()];
        for p in model.free_parameters() {
            let op = p.relation.symbol();
            let mut keys = vec![p.label.clone(), format!("{}{op}{}", p.lhs, p.rhs)];
            if op == "~~" {
                keys.push(format!("{}{op}{}", p.rhs, p.lhs));
            }
            let hit = keys.iter().find_map(|k| given.get(k).map(|v| (k.clone(), v.1)));
            theta[p.free.expect("free parameter")] = match hit {
                Some((k, v)) => {
                    used.insert(k);
                    v
                }
                None => self.default_for(p.kind),
            };
        }
        let unused: Vec<&str> = given
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(_, (orig, _))| orig.as_str())
            .collect();
        if !unused.is_empty() {
            return Err(CliError::Usage(format!(
                "simulation config names no free parameter: {}",
                unused.join(", ")
            )));
        }
        Ok(theta)
    }

    fn default_for(&self, kind: ParamKind) -> f64 {
        let d = &self.defaults;
        match kind {
            ParamKind::Loading => d.loading,
            ParamKind::Regression => d.regression,
            ParamKind::LatentVariance => d.latent_variance,
            ParamKind::LatentCovariance => d.latent_covariance,
            ParamKind::DisturbanceVariance => d.disturbance_variance,
            ParamKind::ErrorVariance => d.error_variance,
            ParamKind::DisturbanceCovariance | ParamKind::ErrorCovariance => 0.0,
        }
    }
}
