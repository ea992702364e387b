use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Glorot/Xavier uniform initialisation for a rank-2 `[fan_in, fan_out]`
/// shape: entries i.i.d. on `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<S: Scalar>(shape: &[usize], seed: u64) -> Result<Tensor<S>> {
    xavier_init_with(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn xavier_init_with<S: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor<S>> {
    let &[fan_in, fan_out] = shape else {
        return Err(Error::shape("xavier_init", shape, &[0, 0]));
    };
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| S::lit(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data)
}
