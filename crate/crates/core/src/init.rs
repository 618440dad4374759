//! Seeded parameter initialization.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// The one RNG used across the crate. Streams are reproducible on every
/// platform for a given seed.
pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-a..a))
}

pub fn gaussian(rng: &mut SeededRng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

pub fn uniform(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
