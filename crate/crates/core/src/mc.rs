//! Seeded Monte Carlo plumbing: stream partitioning that gives the same
//! answer regardless of thread count, and multivariate normal draws.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::{Error, Result};

/// Draws per independently seeded stream.
pub const STREAM_LEN: usize = 4096;

/// Generator for stream `k` of the root `seed`.
pub fn stream_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// SplitMix64 step, used to derive per-replicate seeds from a root seed.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `total` draws split into fixed-size streams. `body(rng, count)` is
/// called once per stream; results come back in stream order.
pub fn run_streams<T, F>(total: usize, seed: u64, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let streams = total.div_ceil(STREAM_LEN);
    (0..streams)
        .into_par_iter()
        .map(|k| {
            let count = STREAM_LEN.min(total - k * STREAM_LEN);
            let mut rng = stream_rng(seed, k as u64);
            body(&mut rng, count)
        })
        .collect()
}

/// Normal(mean, cov) sampler via a symmetric square-root factor, so
/// semi-definite (e.g. zero-variance) covariances are accepted.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvNormal {
    pub fn new(mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Usage("covariance dimension mismatch".into()));
        }
        let sym = (cov + cov.transpose()) * 0.5;
        if (cov - &sym).abs().max() > 1e-8 * cov.abs().max().max(1e-300) {
            return Err(Error::NotPsd);
        }
        let eig = sym.symmetric_eigen();
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale.max(1e-300) || v.is_nan()) {
            return Err(Error::NotPsd);
        }
        let mut factor = eig.eigenvectors.clone();
        for (j, &v) in eig.eigenvalues.iter().enumerate() {
            let s = v.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(s);
        }
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut impl rand::Rng, out: &mut [f64]) {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| StandardNormal.sample(rng)));
        let x = &self.mean + &self.factor * z;
        out.copy_from_slice(x.as_slice());
    }
}
