//! Central finite-difference gradient verification.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference gradient of a scalar function at `x`.
pub fn central_gradient<S: Scalar>(
    f: impl Fn(&Tensor<S>) -> Result<S>,
    x: &Tensor<S>,
    h: S,
) -> Result<Tensor<S>> {
    if !(h > S::zero()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[k] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("finite difference at coordinate {k}")));
        }
        grad.data_mut()[k] = (up - down) / (h + h);
    }
    Ok(grad)
}

/// `max_k |g_k - ĝ_k| / max(1e-8, |g_k| + |ĝ_k|)`.
pub fn relative_gradient_error<S: Scalar>(analytic: &Tensor<S>, numeric: &Tensor<S>) -> S {
    let floor = S::lit(1e-8);
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&g, &n)| (g - n).abs() / floor.max(g.abs() + n.abs()))
        .fold(S::zero(), S::max)
}

/// Compares tape gradients of `f` against central differences for every
/// input tensor and returns the worst relative error.
pub fn finite_difference_check<S: Scalar>(
    f: impl for<'t> Fn(&[Var<'t, S>]) -> Result<Var<'t, S>>,
    inputs: &[Tensor<S>],
    h: S,
) -> Result<S> {
    let tape = Tape::new();
    let leaves: Vec<Var<'_, S>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&leaves)?;
    let value = loss.value().item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite("finite_difference_check objective".into()));
    }
    let grads = tape.backward(loss)?;

    let mut worst = S::zero();
    for (slot, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf)?;
        let eval = |probe: &Tensor<S>| -> Result<S> {
            let t = Tape::new();
            let vars: Vec<Var<'_, S>> = inputs
                .iter()
                .enumerate()
                .map(|(i, x)| t.constant(if i == slot { probe.clone() } else { x.clone() }))
                .collect();
            f(&vars)?.value().item()
        };
        let numeric = central_gradient(eval, &inputs[slot], h)?;
        worst = worst.max(relative_gradient_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = finite_difference_check(|v| Ok(v[0].square().sum_all()), &[x], 1e-5).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::vector(vec![1.0]);
        assert!(finite_difference_check(|v| Ok(v[0].sum_all()), &[x], 0.0).is_err());
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::vector(vec![1.0]);
        let r = finite_difference_check(|v| Ok(v[0].scale(1e308).scale(1e308).sum_all()), &[x], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
