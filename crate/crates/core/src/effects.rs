//! Total, direct and indirect effects among latent variables, with delta
//! method and percentile bootstrap intervals.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{covariance_of_rows, Dataset, Divisor, SampleMoments};
use crate::model::{ModelSpec, ParamMatrices};
use crate::report::matrix_serde;
use crate::sem::{self, EstimationOptions, FitResult, SemError};
use crate::stats;

#[derive(Debug, Error)]
pub enum EffectError {
    #[error("I - B is singular")]
    Singular,
    #[error("unknown latent variable `{0}`")]
    UnknownLatent(String),
    #[error("no parameter labelled `{0}`")]
    MissingLabel(String),
    #[error("no effect decomposition for {0}")]
    MissingEffect(String),
    #[error("invalid bootstrap options: {0}")]
    InvalidOptions(String),
    #[error("{failed} of {total} bootstrap replicates failed to converge (limit 20%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("parameter covariance matrix is unavailable")]
    NoCovariance,
    #[error(transparent)]
    Sem(#[from] SemError),
}

/// Effect matrices in LISREL block form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    /// `(I - B)^-1 Gamma`
    #[serde(with = "matrix_serde")]
    pub total_xi: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub direct_xi: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub indirect_xi: DMatrix<f64>,
    /// `(I - B)^-1 - I`
    #[serde(with = "matrix_serde")]
    pub total_eta: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub direct_eta: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub indirect_eta: DMatrix<f64>,
}

/// Splits the structural effects implied by `B` (eta on eta) and `Gamma`
/// (eta on xi).
pub fn decompose(beta: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<Decomposition, EffectError> {
    let m = beta.nrows();
    let inv = (DMatrix::identity(m, m) - beta).try_inverse().ok_or(EffectError::Singular)?;
    let total_xi = &inv * gamma;
    let total_eta = inv - DMatrix::identity(m, m);
    Ok(Decomposition {
        indirect_xi: &total_xi - gamma,
        indirect_eta: &total_eta - beta,
        total_xi,
        direct_xi: gamma.clone(),
        total_eta,
        direct_eta: beta.clone(),
    })
}

/// Structural effects of a fitted model on the stacked latent system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentEffects {
    /// Latents, endogenous first.
    pub latents: Vec<String>,
    /// Entry `(target, source)`.
    #[serde(with = "matrix_serde")]
    pub total: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub direct: DMatrix<f64>,
}

impl LatentEffects {
    pub fn at(model: &ParamMatrices, theta: &[f64]) -> Result<LatentEffects, EffectError> {
        let ev = sem::Engine::new(model).evaluate(theta).map_err(|e| match e {
            SemError::SingularBeta => EffectError::Singular,
            other => other.into(),
        })?;
        let m = ev.beta.nrows();
        Ok(LatentEffects {
            latents: model.latents(),
            total: ev.inv_ib - DMatrix::identity(m, m),
            direct: ev.beta,
        })
    }

    fn index(&self, name: &str) -> Result<usize, EffectError> {
        self.latents
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| EffectError::UnknownLatent(name.to_string()))
    }

    pub fn total(&self, source: &str, target: &str) -> Result<f64, EffectError> {
        Ok(self.total[(self.index(target)?, self.index(source)?)])
    }

    pub fn direct(&self, source: &str, target: &str) -> Result<f64, EffectError> {
        Ok(self.direct[(self.index(target)?, self.index(source)?)])
    }

    /// `(total, direct, indirect)` for one effect.
    pub fn triple(&self, effect: &EffectSpec) -> Result<[f64; 3], EffectError> {
        self.index(&effect.mediator)?;
        let total = self.total(&effect.source, &effect.target)?;
        let direct = self.direct(&effect.source, &effect.target)?;
        Ok([total, direct, total - direct])
    }

    /// Indirect effect routed through one mediator.
    pub fn via(&self, effect: &EffectSpec) -> Result<f64, EffectError> {
        Ok(self.total(&effect.source, &effect.mediator)? * self.total(&effect.mediator, &effect.target)?)
    }
}

/// A source -> mediator -> target triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EffectSpec {
    pub source: String,
    pub mediator: String,
    pub target: String,
}

impl EffectSpec {
    pub fn new(source: &str, mediator: &str, target: &str) -> EffectSpec {
        EffectSpec {
            source: source.into(),
            mediator: mediator.into(),
            target: target.into(),
        }
    }

    /// Parses `SRC:MED:DST`.
    pub fn parse(text: &str) -> Option<EffectSpec> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        match parts.as_slice() {
            [s, m, t] if !s.is_empty() && !m.is_empty() && !t.is_empty() => Some(EffectSpec::new(s, m, t)),
            _ => None,
        }
    }
}

impl std::fmt::Display for EffectSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.source, self.mediator, self.target)
    }
}

/// Variance of a product of two independent normal estimates.
pub fn delta_variance(gamma: f64, b: f64, var_gamma: f64, var_b: f64) -> f64 {
    gamma * gamma * var_b + b * b * var_gamma + var_gamma * var_b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IntervalMethod {
    Delta,
    Percentile { replicates: usize, used: usize, failed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectDecomposition {
    pub effect: EffectSpec,
    pub level: f64,
    pub method: IntervalMethod,
    pub total: Interval,
    pub direct: Interval,
    pub indirect: Interval,
    /// Point estimate of the indirect effect through the named mediator.
    pub via_mediator: f64,
}

fn check_level(level: f64) -> Result<(), EffectError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(EffectError::InvalidOptions(format!("level must lie in (0, 1), got {level}")))
    }
}

/// Delta-method intervals from the fit's parameter covariance, using a
/// central-difference gradient of each effect with respect to theta.
pub fn delta_ci(fit: &FitResult, effects: &[EffectSpec], level: f64) -> Result<Vec<EffectDecomposition>, EffectError> {
    check_level(level)?;
    let cov = fit.param_cov.as_ref().ok_or(EffectError::NoCovariance)?;
    let z = stats::normal_quantile(0.5 + level / 2.0);
    let base = LatentEffects::at(&fit.model, &fit.theta)?;
    let t = fit.theta.len();
    let mut grads = Vec::with_capacity(t);
    for k in 0..t {
        let h = 1e-6 * fit.theta[k].abs().max(1.0);
        let mut up = fit.theta.clone();
        let mut down = fit.theta.clone();
        up[k] += h;
        down[k] -= h;
        grads.push((LatentEffects::at(&fit.model, &up)?, LatentEffects::at(&fit.model, &down)?, h));
    }
    effects
        .iter()
        .map(|e| {
            let point = base.triple(e)?;
            let mut g = vec![[0.0; 3]; t];
            for (k, (up, down, h)) in grads.iter().enumerate() {
                let (a, b) = (up.triple(e)?, down.triple(e)?);
                for c in 0..3 {
                    g[k][c] = (a[c] - b[c]) / (2.0 * h);
                }
            }
            let interval = |c: usize| {
                let mut var = 0.0;
                for i in 0..t {
                    for j in 0..t {
                        var += g[i][c] * cov[(i, j)] * g[j][c];
                    }
                }
                let half = z * var.max(0.0).sqrt();
                Interval {
                    estimate: point[c],
                    lower: point[c] - half,
                    upper: point[c] + half,
                }
            };
            Ok(EffectDecomposition {
                effect: e.clone(),
                level,
                method: IntervalMethod::Delta,
                total: interval(0),
                direct: interval(1),
                indirect: interval(2),
                via_mediator: base.via(e)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    pub estimation: EstimationOptions,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_rate: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 2000,
            level: 0.95,
            seed: 0,
            workers: None,
            estimation: EstimationOptions::default(),
            max_failure_rate: 0.2,
        }
    }
}

/// Full-sample fit plus bootstrap intervals.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub decompositions: Vec<EffectDecomposition>,
    pub replicates: usize,
    pub failed: usize,
    #[serde(skip)]
    pub fit: FitResult,
}

/// Nonparametric case-resampling bootstrap of the named effects.
///
/// Replicate `r` draws from its own generator seeded with `seed + r`, so
/// results do not depend on the number of workers.
pub fn bootstrap_ci(
    dataset: &Dataset,
    spec: &ModelSpec,
    effects: &[EffectSpec],
    opts: &BootstrapOptions,
) -> Result<BootstrapResult, EffectError> {
    check_level(opts.level)?;
    if opts.replicates < 100 {
        return Err(EffectError::InvalidOptions(format!(
            "at least 100 replicates required, got {}",
            opts.replicates
        )));
    }
    let wanted = spec.indicators();
    let order: Vec<String> = dataset
        .names
        .iter()
        .filter(|n| wanted.contains(&n.as_str()))
        .cloned()
        .collect();
    let subset = dataset.select(&order).map_err(SemError::from)?;
    let rows = subset.complete_rows();
    let p = order.len();
    let n = rows.len();
    let moments = SampleMoments::from_covariance(order.clone(), covariance_of_rows(&rows, p, Divisor::NMinusOne), n)
        .map_err(SemError::from)?;
    let fit = sem::fit(spec, &moments, &opts.estimation)?;
    let base = LatentEffects::at(&fit.model, &fit.theta)?;
    let points: Vec<[f64; 3]> = effects.iter().map(|e| base.triple(e)).collect::<Result<_, _>>()?;
    let via: Vec<f64> = effects.iter().map(|e| base.via(e)).collect::<Result<_, _>>()?;

    let replicate_opts = EstimationOptions {
        start: Some(fit.theta.clone()),
        standard_errors: false,
        ..opts.estimation.clone()
    };
    let model = &fit.model;
    let one = |r: usize| -> Option<Vec<[f64; 3]>> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
        let sample: Vec<Vec<f64>> = (0..n).map(|_| rows[rng.random_range(0..n)].clone()).collect();
        let cov = covariance_of_rows(&sample, p, Divisor::NMinusOne);
        let refit = sem::fit_matrices(model, &cov, n, &replicate_opts).ok()?;
        if !refit.converged {
            return None;
        }
        let eff = LatentEffects::at(model, &refit.theta).ok()?;
        effects.iter().map(|e| eff.triple(e).ok()).collect()
    };
    let draws: Vec<Option<Vec<[f64; 3]>>> = match opts.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| EffectError::InvalidOptions(e.to_string()))?;
            pool.install(|| (0..opts.replicates).into_par_iter().map(one).collect())
        }
        None => (0..opts.replicates).into_par_iter().map(one).collect(),
    };
    let ok: Vec<Vec<[f64; 3]>> = draws.into_iter().flatten().collect();
    let failed = opts.replicates - ok.len();
    if failed as f64 > opts.max_failure_rate * opts.replicates as f64 {
        return Err(EffectError::TooManyFailures {
            failed,
            total: opts.replicates,
        });
    }

    let lo_q = (1.0 - opts.level) / 2.0;
    let hi_q = 1.0 - lo_q;
    let decompositions = effects
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let interval = |c: usize| {
                let mut v: Vec<f64> = ok.iter().map(|d| d[i][c]).collect();
                v.sort_by(f64::total_cmp);
                Interval {
                    estimate: points[i][c],
                    lower: stats::quantile_sorted(&v, lo_q),
                    upper: stats::quantile_sorted(&v, hi_q),
                }
            };
            EffectDecomposition {
                effect: e.clone(),
                level: opts.level,
                method: IntervalMethod::Percentile {
                    replicates: opts.replicates,
                    used: ok.len(),
                    failed,
                },
                total: interval(0),
                direct: interval(1),
                indirect: interval(2),
                via_mediator: via[i],
            }
        })
        .collect();
    Ok(BootstrapResult {
        decompositions,
        replicates: opts.replicates,
        failed,
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mediation {
    None,
    Partial,
    Full,
}

impl std::fmt::Display for Mediation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mediation::None => "no mediation",
            Mediation::Partial => "partial mediation",
            Mediation::Full => "full mediation",
        })
    }
}

/// Verdict from the sign pattern of the direct and indirect intervals.
pub fn classify_mediation(direct: &Interval, indirect: &Interval) -> Mediation {
    match (indirect.excludes_zero(), direct.excludes_zero()) {
        (false, _) => Mediation::None,
        (true, true) => Mediation::Partial,
        (true, false) => Mediation::Full,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Hypothesis {
    /// Supported when the labelled path is significant.
    Direct { id: String, label: String },
    Mediation { id: String, effect: EffectSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub id: String,
    pub description: String,
    pub estimate: f64,
    pub p: Option<f64>,
    pub mediation: Option<Mediation>,
    pub supported: bool,
}

/// Direct hypotheses: supported iff `p < alpha`. Mediation hypotheses:
/// supported unless the verdict is "no mediation".
pub fn classify_hypotheses(
    fit: &FitResult,
    decompositions: &[EffectDecomposition],
    hypotheses: &[Hypothesis],
    alpha: f64,
) -> Result<Vec<Verdict>, EffectError> {
    hypotheses
        .iter()
        .map(|h| match h {
            Hypothesis::Direct { id, label } => {
                let est = fit.estimate(label).ok_or_else(|| EffectError::MissingLabel(label.clone()))?;
                Ok(Verdict {
                    id: id.clone(),
                    description: format!("{} {} {}", est.lhs, est.op, est.rhs),
                    estimate: est.estimate,
                    p: est.p,
                    mediation: None,
                    supported: est.p.is_some_and(|p| p < alpha),
                })
            }
            Hypothesis::Mediation { id, effect } => {
                let d = decompositions
                    .iter()
                    .find(|d| &d.effect == effect)
                    .ok_or_else(|| EffectError::MissingEffect(effect.to_string()))?;
                let verdict = classify_mediation(&d.direct, &d.indirect);
                Ok(Verdict {
                    id: id.clone(),
                    description: format!("{} -> {} -> {}", effect.source, effect.mediator, effect.target),
                    estimate: d.indirect.estimate,
                    p: None,
                    mediation: Some(verdict),
                    supported: verdict != Mediation::None,
                })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lower: f64, upper: f64) -> Interval {
        Interval {
            estimate: 0.5 * (lower + upper),
            lower,
            upper,
        }
    }

    #[test]
    fn no_mediator_paths() {
        let beta = DMatrix::zeros(2, 2);
        let gamma = DMatrix::from_row_slice(2, 1, &[0.4, -0.2]);
        let d = decompose(&beta, &gamma).unwrap();
        assert_eq!(d.total_xi, gamma);
        assert!(d.indirect_xi.iter().all(|v| *v == 0.0));
        assert!(d.total_eta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_mediator_chain() {
        // eta = (PerVa, PB), xi = (PBC); PB <- PerVa <- PBC and PB <- PBC
        let beta = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]);
        let gamma = DMatrix::from_row_slice(2, 1, &[0.232, 0.034]);
        let d = decompose(&beta, &gamma).unwrap();
        assert!((d.indirect_xi[(1, 0)] - 0.116).abs() < 1e-12);
        assert!((d.total_xi[(1, 0)] - 0.150).abs() < 1e-12);
        assert!((d.total_eta[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_system() {
        let beta = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(decompose(&beta, &DMatrix::zeros(2, 1)), Err(EffectError::Singular)));
    }

    #[test]
    fn delta_variance_plug_in() {
        assert_eq!(delta_variance(0.3, 0.4, 0.0, 0.0), 0.0);
        assert!((delta_variance(0.0, 1.0, 0.04, 0.01) - 0.0404).abs() < 1e-15);
    }

    #[test]
    fn mediation_verdicts() {
        assert_eq!(classify_mediation(&iv(-0.1, 0.5), &iv(0.1, 0.4)), Mediation::Full);
        assert_eq!(classify_mediation(&iv(0.1, 0.5), &iv(0.1, 0.4)), Mediation::Partial);
        assert_eq!(classify_mediation(&iv(0.05, 0.27), &iv(-0.001, 0.155)), Mediation::None);
        assert_eq!(classify_mediation(&iv(-0.3, -0.1), &iv(-0.4, -0.1)), Mediation::Partial);
    }

    #[test]
    fn effect_spec_parse() {
        assert_eq!(EffectSpec::parse("A:M:B"), Some(EffectSpec::new("A", "M", "B")));
        assert_eq!(EffectSpec::parse("A:B"), None);
        assert_eq!(EffectSpec::parse("A::B"), None);
    }
}
