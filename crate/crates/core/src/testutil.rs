//! Shared helpers for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::DependencyMatrix;

/// Random row-stochastic zero-diagonal matrix.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DependencyMatrix {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            if i != j {
                let v: f64 = rng.gen_range(1e-3..1.0);
                data[i * n + j] = v;
                sum += v;
            }
        }
        for j in 0..n {
            data[i * n + j] /= sum;
        }
    }
    DependencyMatrix::new(n, data).unwrap()
}
