use rand::Rng;

use super::sinkhorn::{sinkhorn, DoublyStochastic};
use crate::error::{Error, Result};
use crate::nn::{xavier_init_with, Binder};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_SINKHORN_ITERATIONS: usize = 100;

/// Maps a set `X: [n, d]` to a soft permutation
/// `sinkhorn(relu(X · W) / temperature)` with `W: [d, n]`. Row `i` of the
/// result scores element `i` against each of the `n` output positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationNetwork<S: Scalar = f64> {
    pub weight: Tensor<S>,
    pub temperature: S,
    pub iterations: usize,
}

pub struct BoundPermutationNetwork<'t, S: Scalar> {
    weight: Var<'t, S>,
    temperature: S,
    iterations: usize,
    set_size: usize,
}

impl<S: Scalar> PermutationNetwork<S> {
    pub fn new(dim: usize, set_size: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(PermutationNetwork {
            weight: xavier_init_with(&[dim, set_size], rng)?,
            temperature: S::lit(DEFAULT_TEMPERATURE),
            iterations: DEFAULT_SINKHORN_ITERATIONS,
        })
    }

    pub fn zeros(dim: usize, set_size: usize) -> Self {
        PermutationNetwork {
            weight: Tensor::zeros(&[dim, set_size]),
            temperature: S::lit(DEFAULT_TEMPERATURE),
            iterations: DEFAULT_SINKHORN_ITERATIONS,
        }
    }

    pub fn with_sinkhorn(mut self, temperature: S, iterations: usize) -> Self {
        self.temperature = temperature;
        self.iterations = iterations;
        self
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn set_size(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        vec![&self.weight]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.weight]
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t, S>) -> BoundPermutationNetwork<'t, S> {
        BoundPermutationNetwork {
            weight: b.bind(&self.weight),
            temperature: self.temperature,
            iterations: self.iterations,
            set_size: self.set_size(),
        }
    }

    /// Soft permutation for a single set.
    pub fn forward(&self, x: &Tensor<S>) -> Result<DoublyStochastic<S>> {
        if x.rank() != 2 {
            return Err(Error::shape("pn_forward", x.shape(), self.weight.shape()));
        }
        let tape = Tape::new();
        let pn = self.bind(&mut Binder::new(&tape, false));
        let batch = tape.constant(x.reshape(&[1, x.rows(), x.cols()])?);
        let p = pn.forward(&batch)?.value();
        Ok(DoublyStochastic::from_sinkhorn(p.reshape(&[x.rows(), x.rows()])?))
    }
}

impl<'t, S: Scalar> BoundPermutationNetwork<'t, S> {
    /// Relu scores `[batch, n, n]` before Sinkhorn.
    pub fn scores(&self, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = x.shape();
        let w_shape = self.weight.shape();
        let &[batch, n, d] = shape.as_slice() else {
            return Err(Error::shape("pn_forward", &shape, &w_shape));
        };
        if n != self.set_size || d != w_shape[0] {
            return Err(Error::shape("pn_forward", &shape, &w_shape));
        }
        Ok(x.reshape(&[batch * n, d])?
            .matmul(&self.weight)?
            .relu()
            .reshape(&[batch, n, n])?)
    }

    /// Soft permutations `[batch, n, n]` for a batch of sets `[batch, n, d]`.
    pub fn forward(&self, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        sinkhorn(&self.scores(x)?, self.temperature, self.iterations)
    }
}

/// `Pᵀ · X`: output row `j` is the `P[·, j]`-weighted mix of the elements.
/// Works on single matrices and on batches.
pub fn apply_soft<'t, S: Scalar>(p: &Var<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
    p.contract_rows(x)
}

/// Tape-free [`apply_soft`] for one set.
pub fn apply_soft_matrix<S: Scalar>(p: &DoublyStochastic<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    crate::tensor::kernels::contract_rows(p.matrix(), x)
}
