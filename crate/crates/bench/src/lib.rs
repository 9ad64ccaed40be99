//! Shared fixtures for the criterion benchmarks.

use hyprl_core::{BallConfig, BallPoint, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point with norm below `0.9 / sqrt(c)`.
pub fn ball_point(rng: &mut impl Rng, dim: usize, config: BallConfig) -> BallPoint {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = rng.random_range(0.0..0.9) / config.sqrt_c();
    BallPoint::new(v.iter().map(|x| x * r / norm).collect(), config).expect("inside the ball")
}

/// `rows×cols` tensor with entries in `[-scale, scale)`.
pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Points drawn uniformly in the unit cube, as rows.
pub fn cloud(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect()
}
