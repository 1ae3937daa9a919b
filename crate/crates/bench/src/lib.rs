//! Shared inputs for the criterion benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_transfer::CoordinateSet;

/// `n` uniform sites in the unit square.
pub fn uniform_sites(n: usize, seed: u64) -> CoordinateSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CoordinateSet::new((0..n).map(|_| [rng.random(), rng.random()]).collect())
        .expect("finite sites")
}

/// Smooth regression problem with `k` uniform features.
pub fn regression(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>());
    let y = (0..n)
        .map(|i| (3.0 * x[(i, 0)]).sin() + x[(i, k - 1)] + 0.1 * rng.random::<f64>())
        .collect();
    (x, y)
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}
