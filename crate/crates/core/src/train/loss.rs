use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::TaskKind;
use crate::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    EigvecCosine,
    CrossEntropy,
}

impl LossKind {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Kary | TaskKind::Percentile | TaskKind::Maxflow => LossKind::Mse,
            TaskKind::Spiked => LossKind::EigvecCosine,
            TaskKind::Maxdigit => LossKind::CrossEntropy,
        }
    }

    /// Regression targets are standardised before training.
    pub fn standardizes_labels(self) -> bool {
        self == LossKind::Mse
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::EigvecCosine => "eigvec-cosine",
            LossKind::CrossEntropy => "cross-entropy",
        }
    }
}

/// Batch loss of predictions `[B, L]` against targets `[B, L]`, averaged
/// over the batch.
pub fn loss_var<'t>(kind: LossKind, pred: &Var<'t>, target: &Var<'t>) -> Result<Var<'t>> {
    let shape = pred.shape();
    if shape != target.shape() || shape.len() != 2 || shape[0] == 0 {
        return Err(Error::shape("loss", &shape, &target.shape()));
    }
    let (b, l) = (shape[0], shape[1]);
    match kind {
        LossKind::Mse => Ok(pred.sub(target)?.square().sum_all().scale(1.0 / (b * l) as f64)),
        LossKind::EigvecCosine => {
            let norms = pred.square().sum(1)?;
            if norms.value().data().iter().any(|&n| !(n > 0.0)) {
                return Err(Error::Domain {
                    op: "eigvec_cosine_loss",
                    detail: "zero-norm prediction".into(),
                });
            }
            let dot = pred.mul(target)?.sum(1)?;
            let cos2 = dot.square().div(&norms.mul(&target.square().sum(1)?)?)?;
            Ok(cos2.neg().add_scalar(1.0).sum_all().scale(1.0 / b as f64))
        }
        LossKind::CrossEntropy => Ok(target.mul(&pred.log_softmax(1)?)?.sum_all().scale(-1.0 / b as f64)),
    }
}

/// [`loss_var`] on plain tensors; vectors are treated as a batch of one.
pub fn loss_eval(kind: LossKind, pred: &Tensor, label: &Tensor) -> Result<f64> {
    let lift = |t: &Tensor| match t.rank() {
        1 => t.reshape(&[1, t.len()]),
        _ => Ok(t.clone()),
    };
    let tape = Tape::new();
    let p = tape.constant(lift(pred)?);
    let y = tape.constant(lift(label)?);
    loss_var(kind, &p, &y)?.value().item()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn reference_values() {
        let y = v(&[1.0, -2.0, 0.5]);
        assert_eq!(loss_eval(LossKind::Mse, &y, &y).unwrap(), 0.0);
        assert_eq!(loss_eval(LossKind::Mse, &v(&[0.0, 0.0]), &v(&[1.0, 3.0])).unwrap(), 5.0);
        let e1 = v(&[1.0, 0.0]);
        let e2 = v(&[0.0, 1.0]);
        assert_eq!(loss_eval(LossKind::EigvecCosine, &e1, &e2).unwrap(), 1.0);
        let neg = y.map(|x| -x);
        assert!(loss_eval(LossKind::EigvecCosine, &neg, &y).unwrap().abs() < 1e-15);
        assert!(loss_eval(LossKind::EigvecCosine, &v(&[0.0, 0.0]), &e1).is_err());
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let got = loss_eval(LossKind::CrossEntropy, &v(&[0.0; 4]), &v(&[0.0, 0.0, 1.0, 0.0])).unwrap();
        assert!((got - 4f64.ln()).abs() < 1e-14);
    }
}
