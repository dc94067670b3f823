//! Gaussian blobs with simplex-arranged centers.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Preprocessing};
use crate::error::{Error, Result};

/// `n` points in `D` dimensions, `n / num_classes` per class. Class `c` is
/// `N(mu_c, I)` where `mu_c = (separation / sqrt 2) (e_c - mean_k e_k)`, so
/// every pair of centers is exactly `separation` apart. Labels cycle
/// `0, 1, .., num_classes - 1` so any prefix is close to balanced. The seed
/// only drives the noise.
pub fn synth_blobs(
    n: usize,
    num_classes: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || n == 0 || !n.is_multiple_of(num_classes) {
        return Err(Error::InvalidArgument(format!(
            "n = {n} must be a positive multiple of num_classes = {num_classes}"
        )));
    }
    if d < num_classes {
        return Err(Error::InvalidArgument(format!(
            "dimension {d} is too small to hold {num_classes} simplex centers"
        )));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::InvalidArgument(format!("separation must be >= 0, got {separation}")));
    }
    let scale = separation / std::f64::consts::SQRT_2;
    let shift = 1.0 / num_classes as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let c = i % num_classes;
        labels.push(c);
        for (j, v) in row.iter_mut().enumerate() {
            let center = if j < num_classes {
                scale * (f64::from(j == c) - shift)
            } else {
                0.0
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = center + z;
        }
    }
    Dataset::new(features, labels, num_classes, None, Preprocessing::None)
}
