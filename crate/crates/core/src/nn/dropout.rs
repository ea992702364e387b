use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Inverted dropout: in training, zero each entry with probability `rate`
/// and scale survivors by `1 / (1 - rate)`; otherwise the identity.
pub fn dropout<'t, S: Scalar>(x: &Var<'t, S>, rate: f64, rng: &mut impl Rng, training: bool) -> Result<Var<'t, S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(*x);
    }
    let shape = x.shape();
    let keep = S::lit(1.0 / (1.0 - rate));
    let count = shape.iter().product();
    let mask = (0..count)
        .map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep })
        .collect();
    let mask = x.tape().constant(Tensor::new(shape, mask)?);
    x.mul(&mask)
}
