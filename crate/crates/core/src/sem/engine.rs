//! Evaluation of the implied covariance matrix and of the ML discrepancy
//! together with its analytic gradient.
//!
//! Internally the eight LISREL matrices are stacked into a single latent
//! system with latents ordered `(eta, xi)`:
//!
//! ```text
//! Lambda = [Ly 0; 0 Lx]      (rows permuted to observed order)
//! B*     = [B Gamma; 0 0]
//! Psi*   = [Psi 0; 0 Phi]
//! Sigma  = Lambda (I-B*)^-1 Psi* (I-B*)^-T Lambda' + Theta
//! ```
//!
//! which reproduces the LISREL block formulas exactly.

use nalgebra::DMatrix;

use crate::linalg;
use crate::model::{Entry, MatrixKind, ParamMatrices};

use super::SemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Lambda,
    Beta,
    Psi,
    Theta,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    block: Block,
    row: usize,
    col: usize,
    entry: Entry,
}

/// Numeric state of the stacked system at one parameter vector.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub lambda: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    /// `(I - B*)^-1`
    pub inv_ib: DMatrix<f64>,
    /// Model-implied latent covariance, latents in `(eta, xi)` order.
    pub latent_cov: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Precomputed scatter map from pattern matrices to the stacked system.
#[derive(Debug, Clone)]
pub struct Engine {
    p: usize,
    m: usize,
    n_free: usize,
    slots: Vec<Slot>,
}

impl Engine {
    pub fn new(model: &ParamMatrices) -> Engine {
        let ne = model.endogenous.len();
        let nx = model.exogenous.len();
        let mut slots = Vec::new();
        for kind in [
            MatrixKind::LambdaY,
            MatrixKind::LambdaX,
            MatrixKind::Beta,
            MatrixKind::Gamma,
            MatrixKind::Psi,
            MatrixKind::Phi,
            MatrixKind::ThetaEps,
            MatrixKind::ThetaDelta,
        ] {
            let pm = model.matrix(kind);
            for r in 0..pm.rows {
                for c in 0..pm.cols {
                    let entry = pm.get(r, c);
                    if entry == Entry::Fixed(0.0) {
                        continue;
                    }
                    let (block, row, col) = match kind {
                        MatrixKind::LambdaY => (Block::Lambda, model.y_positions[r], c),
                        MatrixKind::LambdaX => (Block::Lambda, model.x_positions[r], ne + c),
                        MatrixKind::Beta => (Block::Beta, r, c),
                        MatrixKind::Gamma => (Block::Beta, r, ne + c),
                        MatrixKind::Psi => (Block::Psi, r, c),
                        MatrixKind::Phi => (Block::Psi, ne + r, ne + c),
                        MatrixKind::ThetaEps => (Block::Theta, model.y_positions[r], model.y_positions[c]),
                        MatrixKind::ThetaDelta => (Block::Theta, model.x_positions[r], model.x_positions[c]),
                    };
                    slots.push(Slot { block, row, col, entry });
                }
            }
        }
        Engine {
            p: model.observed.len(),
            m: ne + nx,
            n_free: model.n_free(),
            slots,
        }
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<Evaluated, SemError> {
        if theta.len() != self.n_free {
            return Err(SemError::ParameterLength {
                expected: self.n_free,
                found: theta.len(),
            });
        }
        let (p, m) = (self.p, self.m);
        let mut lambda = DMatrix::zeros(p, m);
        let mut beta = DMatrix::zeros(m, m);
        let mut psi = DMatrix::zeros(m, m);
        let mut th = DMatrix::zeros(p, p);
        for s in &self.slots {
            let v = match s.entry {
                Entry::Fixed(v) => v,
                Entry::Free(k) => theta[k],
            };
            let target = match s.block {
                Block::Lambda => &mut lambda,
                Block::Beta => &mut beta,
                Block::Psi => &mut psi,
                Block::Theta => &mut th,
            };
            target[(s.row, s.col)] = v;
        }
        let ib = DMatrix::identity(m, m) - &beta;
        let inv_ib = ib.try_inverse().ok_or(SemError::SingularBeta)?;
        let mut latent_cov = &inv_ib * &psi * inv_ib.transpose();
        linalg::symmetrize(&mut latent_cov);
        let mut sigma = &lambda * &latent_cov * lambda.transpose() + &th;
        linalg::symmetrize(&mut sigma);
        Ok(Evaluated {
            lambda,
            beta,
            psi,
            theta: th,
            inv_ib,
            latent_cov,
            sigma,
        })
    }

    /// Gradient of a scalar `F(Sigma)` given `W = dF/dSigma` (symmetric,
    /// entries treated as independent).
    pub fn chain_gradient(&self, ev: &Evaluated, w: &DMatrix<f64>) -> Vec<f64> {
        let d_lambda = 2.0 * w * &ev.lambda * &ev.latent_cov;
        let g = ev.lambda.transpose() * w * &ev.lambda;
        let et_g = ev.inv_ib.transpose() * &g;
        let d_psi = &et_g * &ev.inv_ib;
        let d_beta = 2.0 * &et_g * &ev.latent_cov;
        let mut grad = vec![0.0; self.n_free];
        for s in &self.slots {
            if let Entry::Free(k) = s.entry {
                grad[k] += match s.block {
                    Block::Lambda => d_lambda[(s.row, s.col)],
                    Block::Beta => d_beta[(s.row, s.col)],
                    Block::Psi => d_psi[(s.row, s.col)],
                    Block::Theta => w[(s.row, s.col)],
                };
            }
        }
        grad
    }
}

/// ML discrepancy bound to one sample covariance matrix.
#[derive(Debug, Clone)]
pub struct MlObjective {
    engine: Engine,
    sample: DMatrix<f64>,
    log_det_sample: f64,
}

impl MlObjective {
    pub fn new(model: &ParamMatrices, sample: &DMatrix<f64>) -> Result<MlObjective, SemError> {
        let log_det_sample = linalg::log_det_spd(sample).ok_or(SemError::SampleNotPositiveDefinite)?;
        Ok(MlObjective {
            engine: Engine::new(model),
            sample: sample.clone(),
            log_det_sample,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// `None` when the implied matrix is not positive definite.
    pub fn value(&self, theta: &[f64]) -> Option<f64> {
        let ev = self.engine.evaluate(theta).ok()?;
        let chol = linalg::cholesky(&ev.sigma)?;
        Some(self.discrepancy(&ev.sigma, &chol.inverse(), &chol))
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let ev = self.engine.evaluate(theta).ok()?;
        let chol = linalg::cholesky(&ev.sigma)?;
        let inv = chol.inverse();
        let f = self.discrepancy(&ev.sigma, &inv, &chol);
        let w = &inv - &inv * &self.sample * &inv;
        Some((f, self.engine.chain_gradient(&ev, &w)))
    }

    fn discrepancy(
        &self,
        sigma: &DMatrix<f64>,
        inv: &DMatrix<f64>,
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ) -> f64 {
        let l = chol.l_dirty();
        let log_det: f64 = 2.0 * (0..sigma.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        let tr = (&self.sample * inv).trace();
        log_det + tr - self.log_det_sample - sigma.nrows() as f64
    }
}

/// Model-implied covariance of the observed variables, in the model's
/// observed order.
pub fn implied_covariance(model: &ParamMatrices, theta: &[f64]) -> Result<DMatrix<f64>, SemError> {
    Engine::new(model).evaluate(theta).map(|e| e.sigma)
}

/// `log|Sigma| + tr(S Sigma^-1) - log|S| - p`.
pub fn f_ml(sigma: &DMatrix<f64>, sample: &DMatrix<f64>) -> Result<f64, SemError> {
    let log_det_s = linalg::log_det_spd(sample).ok_or(SemError::SampleNotPositiveDefinite)?;
    let chol = linalg::cholesky(sigma).ok_or(SemError::ImpliedNotPositiveDefinite)?;
    let l = chol.l_dirty();
    let log_det: f64 = 2.0 * (0..sigma.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let tr = (sample * chol.inverse()).trace();
    Ok(log_det + tr - log_det_s - sigma.nrows() as f64)
}

/// Normal-theory log-likelihood under a zero mean structure:
/// `-(n/2) [log|Sigma| + tr(S Sigma^-1) + p log(2 pi)]`.
pub fn log_likelihood(sigma: &DMatrix<f64>, sample: &DMatrix<f64>, n: f64) -> Result<f64, SemError> {
    if !linalg::is_positive_definite(sample) {
        return Err(SemError::SampleNotPositiveDefinite);
    }
    let chol = linalg::cholesky(sigma).ok_or(SemError::ImpliedNotPositiveDefinite)?;
    let l = chol.l_dirty();
    let p = sigma.nrows() as f64;
    let log_det: f64 = 2.0 * (0..sigma.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let tr = (sample * chol.inverse()).trace();
    Ok(-(n / 2.0) * (log_det + tr + p * (2.0 * std::f64::consts::PI).ln()))
}

/// Analytic gradient of the ML discrepancy with respect to the free vector.
pub fn ml_gradient(model: &ParamMatrices, theta: &[f64], sample: &DMatrix<f64>) -> Result<Vec<f64>, SemError> {
    let obj = MlObjective::new(model, sample)?;
    obj.value_and_gradient(theta)
        .map(|(_, g)| g)
        .ok_or(SemError::ImpliedNotPositiveDefinite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_matrices, parse_model, BuildOptions};

    fn one_factor() -> ParamMatrices {
        let spec = parse_model("F =~ x1 + x2").unwrap();
        build_matrices(&spec, &["x1".into(), "x2".into()], BuildOptions::default()).unwrap()
    }

    #[test]
    fn one_factor_two_by_two() {
        let m = one_factor();
        // free order: loading x2, phi, theta x1, theta x2
        let theta = [0.8, 1.0, 0.5, 0.5];
        let s = implied_covariance(&m, &theta).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.5, 0.8, 0.8, 1.14]);
        assert!((s - expected).abs().max() < 1e-12);
    }

    #[test]
    fn f_ml_scalar_cases() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let two = &i2 * 2.0;
        let v = f_ml(&two, &i2).unwrap();
        assert!((v - (2.0 * 2f64.ln() + 1.0 - 2.0)).abs() < 1e-12);
        assert!((v - 0.3863).abs() < 5e-5);
        assert!(f_ml(&i2, &i2).unwrap().abs() < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(f_ml(&bad, &i2), Err(SemError::ImpliedNotPositiveDefinite)));
        assert!(matches!(f_ml(&i2, &bad), Err(SemError::SampleNotPositiveDefinite)));
    }

    #[test]
    fn log_likelihood_scalar() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let v = log_likelihood(&one, &one, 2.0).unwrap();
        assert!((v + 1.0 + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((v + 2.8379).abs() < 5e-5);
    }

    #[test]
    fn gradient_matches_finite_differences_small_model() {
        let spec = parse_model("F =~ x1 + x2 + x3\nG =~ y1 + y2 + y3\nG ~ F\ny1 ~~ y2").unwrap();
        let order: Vec<String> = ["x1", "y1", "x2", "y2", "x3", "y3"].iter().map(|s| s.to_string()).collect();
        let m = build_matrices(&spec, &order, BuildOptions::default()).unwrap();
        let mut theta: Vec<f64> = vec![0.0; m.n_free()];
        for p in m.free_parameters() {
            theta[p.free.unwrap()] = if p.kind.is_variance() { 0.9 } else { 0.4 };
        }
        let truth = implied_covariance(&m, &theta).unwrap();
        let sample = &truth + DMatrix::from_fn(6, 6, |i, j| if i == j { 0.2 } else { 0.05 });
        let theta0: Vec<f64> = theta.iter().map(|t| t * 0.9 + 0.05).collect();
        let g = ml_gradient(&m, &theta0, &sample).unwrap();
        let obj = MlObjective::new(&m, &sample).unwrap();
        for k in 0..theta0.len() {
            let h = 1e-6;
            let mut a = theta0.clone();
            let mut b = theta0.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (obj.value(&a).unwrap() - obj.value(&b).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
