use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::linalg;
use crate::model::ParamMatrices;

use super::engine::implied_covariance;
use super::SemError;

/// Draws `n` rows from a zero-mean normal with the model-implied covariance.
///
/// Each row is `L z` with `L` the Cholesky factor and `z` standard normal.
/// Output is a pure function of `(model, theta, n, seed)`.
pub fn simulate(model: &ParamMatrices, theta: &[f64], n: usize, seed: u64) -> Result<Dataset, SemError> {
    let sigma = implied_covariance(model, theta)?;
    let chol = linalg::cholesky(&sigma).ok_or(SemError::ImpliedNotPositiveDefinite)?;
    let l = chol.l();
    let p = sigma.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; p];
    let rows = (0..n)
        .map(|_| {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            (0..p)
                .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
                .collect()
        })
        .collect();
    Ok(Dataset::from_rows(model.observed.clone(), rows))
}
