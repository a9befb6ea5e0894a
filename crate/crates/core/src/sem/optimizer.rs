//! BFGS quasi-Newton minimisation with a backtracking Armijo line search.
//!
//! Infeasible trial points (objective returns `None`) are treated like a
//! failed sufficient-decrease test and the step is halved, so the accepted
//! objective sequence is monotone non-increasing.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsSettings {
    pub max_iter: usize,
    /// Convergence threshold on the infinity norm of the gradient.
    pub gtol: f64,
    /// Relative objective change below which the search is considered stalled.
    pub ftol: f64,
}

#[derive(Debug, Clone)]
pub struct BfgsReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted step, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const STALL_LIMIT: usize = 5;
// Extra steps taken once the gradient test passes; BFGS is superlinear near
// the optimum, so these drive a zero-residual objective to rounding level.
const POLISH_STEPS: usize = 3;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimises `fg`, which returns the objective and its gradient or `None`
/// outside the feasible region. Returns `None` if `x0` itself is infeasible.
pub fn minimize<F>(mut fg: F, x0: &[f64], settings: &BfgsSettings) -> Option<BfgsReport>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g0) = fg(x.as_slice()).filter(|(f, _)| f.is_finite())?;
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut stalled = 0;
    let mut polished = 0;
    let mut last_change = f64::INFINITY;

    while iterations < settings.max_iter {
        if inf_norm(&g) < settings.gtol {
            if polished >= POLISH_STEPS || last_change <= settings.ftol * (1.0 + f.abs()) {
                break;
            }
            polished += 1;
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope.is_nan() || slope >= 0.0 {
            h = DMatrix::identity(n, n);
            fresh = true;
            d = -g.clone();
            slope = -g.norm_squared();
        }
        let dmax = inf_norm(&d);
        let mut alpha = if dmax > 1.0 { 1.0 / dmax } else { 1.0 };

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &x + alpha * &d;
            if let Some((ft, gt)) = fg(trial.as_slice()) {
                if ft.is_finite() && ft <= f + ARMIJO_C1 * alpha * slope {
                    accepted = Some((trial, ft, DVector::from_vec(gt)));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh || inf_norm(&g) < settings.gtol {
                break;
            }
            h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        iterations += 1;

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            if fresh {
                h = DMatrix::identity(n, n) * (sy / y.norm_squared());
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            h -= rho * (&s * hy.transpose() + &hy * s.transpose());
            h += (rho * rho * yhy + rho) * (&s * s.transpose());
            fresh = false;
        }

        let change = (f - f_new).abs();
        last_change = change;
        x = x_new;
        g = g_new;
        f = f_new;
        trace.push(f);
        if change <= settings.ftol * (1.0 + f.abs()) {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let converged = inf_norm(&g) < settings.gtol;
    Some(BfgsReport {
        x: x.as_slice().to_vec(),
        f,
        grad: g.as_slice().to_vec(),
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let settings = BfgsSettings {
            max_iter: 500,
            gtol: 1e-8,
            ftol: 1e-15,
        };
        let out = minimize(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
                Some((f, g))
            },
            &[-1.2, 1.0],
            &settings,
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_infeasible_region() {
        // minimise (x - 2)^2 on x < 1.5: optimum pinned at the boundary region
        let settings = BfgsSettings {
            max_iter: 200,
            gtol: 1e-10,
            ftol: 1e-15,
        };
        let out = minimize(
            |x| (x[0] < 1.5).then(|| ((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)])),
            &[0.0],
            &settings,
        )
        .unwrap();
        assert!(out.x[0] < 1.5);
        assert!(!out.converged);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(minimize(|_| None, &[0.0], &settings).is_none());
    }
}
