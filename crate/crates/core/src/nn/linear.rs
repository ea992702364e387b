use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::xavier_init_with;
use super::Binder;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

/// Fully connected layer `act(x · W + b)` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer<S: Scalar = f64> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub activation: Activation,
}

pub struct BoundLinear<'t, S: Scalar> {
    weight: Var<'t, S>,
    bias: Var<'t, S>,
    activation: Activation,
}

impl<S: Scalar> LinearLayer<S> {
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        Ok(LinearLayer {
            weight: xavier_init_with(&[input, output], rng)?,
            bias: Tensor::zeros(&[output]),
            activation,
        })
    }

    pub fn from_parts(weight: Tensor<S>, bias: Tensor<S>, activation: Activation) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::shape("linear", weight.shape(), bias.shape()));
        }
        Ok(LinearLayer {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t, S>) -> BoundLinear<'t, S> {
        BoundLinear {
            weight: b.bind(&self.weight),
            bias: b.bind(&self.bias),
            activation: self.activation,
        }
    }
}

impl<'t, S: Scalar> BoundLinear<'t, S> {
    /// `x: [rows, in] -> [rows, out]`.
    pub fn forward(&self, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::shape("linear", &shape, &self.weight.shape()));
        }
        let z = x.matmul(&self.weight)?.add(&self.bias.repeat(0, shape[0])?)?;
        Ok(match self.activation {
            Activation::None => z,
            Activation::Relu => z.relu(),
            Activation::Tanh => z.tanh(),
        })
    }
}
