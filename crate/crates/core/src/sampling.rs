//! Seeded Gaussian sampling in coefficient space.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

const PSD_RTOL: f64 = 1e-10;

/// Symmetric square root factor `L` with `L L' = cov`.
pub fn covariance_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    check_dim("covariance columns", n, cov.ncols())?;
    let scale = cov.amax().max(1e-300);
    if (cov - cov.transpose()).amax() > PSD_RTOL * scale {
        return Err(Error::InvalidParameter("covariance is not symmetric"));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_RTOL * scale {
        return Err(Error::NotPsd(min));
    }
    let roots = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Draws `n` samples of `N(mean, cov)`; identical seeds give identical draws.
pub fn sample_initializations(mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    check_dim("covariance rows", mean.len(), cov.nrows())?;
    let factor = covariance_factor(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw(mean, &factor, n, &mut rng))
}

pub(crate) fn draw(mean: &DVector<f64>, factor: &DMatrix<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let dim = mean.len();
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
            mean + factor * z
        })
        .collect()
}
