//! Seeded inputs for the kernel benchmarks in `benches/`.

use lod_core::nn::Batch;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn batch(rows: usize, dim: usize, classes: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((rows, dim), |_| rng.random_range(-2.0..2.0));
    let y = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(x, y).expect("consistent shapes")
}

/// Two well-separated loss groups, shuffled together.
pub fn bimodal_losses(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.3) {
                rng.random_range(0.0..0.1)
            } else {
                rng.random_range(0.6..1.4)
            }
        })
        .collect()
}

/// ID and OOD scores with overlapping supports.
pub fn scores(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
    let ood = (0..n).map(|_| rng.random_range(-3.0..1.0)).collect();
    (id, ood)
}
