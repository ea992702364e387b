use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Non-negative square matrix whose rows and columns sum to one (up to the
/// convergence of the Sinkhorn iterations that produced it).
#[derive(Clone, Debug, PartialEq)]
pub struct DoublyStochastic<S: Scalar = f64>(Tensor<S>);

impl<S: Scalar> DoublyStochastic<S> {
    /// Wraps `m` after checking it is square, non-negative and has unit
    /// marginals within `tol`.
    pub fn new(m: Tensor<S>, tol: S) -> Result<Self> {
        let ds = DoublyStochastic(m);
        if ds.0.rank() != 2 || ds.0.rows() != ds.0.cols() {
            return Err(Error::shape("doubly_stochastic", ds.0.shape(), &[]));
        }
        if ds.0.data().iter().any(|&x| x < S::zero() || !x.is_finite()) {
            return Err(Error::invalid("doubly stochastic entries must be finite and non-negative"));
        }
        if ds.marginal_error() > tol {
            return Err(Error::invalid(format!(
                "marginals off by {} (tolerance {tol})",
                ds.marginal_error()
            )));
        }
        Ok(ds)
    }

    pub(crate) fn from_sinkhorn(m: Tensor<S>) -> Self {
        DoublyStochastic(m)
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Tensor<S> {
        &self.0
    }

    pub fn into_matrix(self) -> Tensor<S> {
        self.0
    }

    /// Largest `|row sum - 1|` and `|column sum - 1|`.
    pub fn marginal_error(&self) -> S {
        let n = self.n();
        let mut worst = S::zero();
        for i in 0..n {
            let row = (0..n).fold(S::zero(), |acc, j| acc + self.0.at(i, j));
            let col = (0..n).fold(S::zero(), |acc, j| acc + self.0.at(j, i));
            worst = worst.max((row - S::one()).abs()).max((col - S::one()).abs());
        }
        worst
    }
}

/// Differentiable Sinkhorn operator on `[n, n]` or batched `[batch, n, n]`
/// logits: starts from `logits / temperature` and alternates row and column
/// normalisation `iterations` times in log space, returning `exp` of the
/// result. The gradient is obtained by unrolling every iteration on the tape.
pub fn sinkhorn<'t, S: Scalar>(logits: &Var<'t, S>, temperature: S, iterations: usize) -> Result<Var<'t, S>> {
    if !(temperature > S::zero()) {
        return Err(Error::invalid(format!("sinkhorn temperature must be positive, got {temperature}")));
    }
    if iterations == 0 {
        return Err(Error::invalid("sinkhorn needs at least one iteration"));
    }
    let shape = logits.shape();
    let (row_axis, col_axis) = match shape.as_slice() {
        [r, c] if r == c => (1, 0),
        [_, r, c] if r == c => (2, 1),
        _ => return Err(Error::shape("sinkhorn", &shape, &[])),
    };
    if shape[row_axis] == 0 {
        return Err(Error::invalid("sinkhorn on an empty matrix"));
    }
    if !logits.value_ref().all_finite() {
        return Err(Error::NonFinite("sinkhorn logits".into()));
    }
    let mut log_s = logits.scale(S::one() / temperature);
    for _ in 0..iterations {
        log_s = log_s.log_softmax(row_axis)?.log_softmax(col_axis)?;
    }
    Ok(log_s.exp())
}

/// Tape-free Sinkhorn on a single `[n, n]` matrix.
pub fn sinkhorn_matrix<S: Scalar>(logits: &Tensor<S>, temperature: S, iterations: usize) -> Result<DoublyStochastic<S>> {
    if logits.rank() != 2 {
        return Err(Error::shape("sinkhorn", logits.shape(), &[]));
    }
    let tape = Tape::new();
    let out = sinkhorn(&tape.constant(logits.clone()), temperature, iterations)?;
    Ok(DoublyStochastic::from_sinkhorn(out.value()))
}
