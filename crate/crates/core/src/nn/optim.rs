use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Adam or plain SGD over an ordered list of parameter tensors.
///
/// Weight decay enters as an L2 term on the (direction-adjusted) gradient,
/// so maximising `f` is step-for-step identical to minimising `-f`.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<S: Scalar = f64> {
    pub kind: OptimizerKind,
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub weight_decay: S,
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn adam(lr: S) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn sgd(lr: S) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn new(kind: OptimizerKind, lr: S) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            weight_decay: S::zero(),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: S) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Tensor<S>], direction: Direction) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer", p.shape(), g.shape()));
            }
        }
        if self.kind == OptimizerKind::Adam && self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.kind == OptimizerKind::Adam && self.m.len() != params.len() {
            return Err(Error::shape("optimizer state", &[self.m.len()], &[params.len()]));
        }
        self.step += 1;
        let sign = match direction {
            Direction::Minimize => S::one(),
            Direction::Maximize => -S::one(),
        };
        let wd = self.weight_decay;
        let (b1, b2) = (self.beta1, self.beta2);
        let t = self.step as i32;
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let pd = p.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, &gi) in pd.iter_mut().zip(g.data()) {
                        let ge = sign * gi + wd * *x;
                        *x = *x - self.lr * ge;
                    }
                }
                OptimizerKind::Adam => {
                    let md = self.m[k].data_mut();
                    let vd = self.v[k].data_mut();
                    for (((x, &gi), m), v) in pd.iter_mut().zip(g.data()).zip(md.iter_mut()).zip(vd.iter_mut()) {
                        let ge = sign * gi + wd * *x;
                        *m = b1 * *m + (S::one() - b1) * ge;
                        *v = b2 * *v + (S::one() - b2) * ge * ge;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *x = *x - self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Tensor<S>], max_norm: S) -> S {
    let sq = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .fold(S::zero(), |acc, &x| acc + x * x);
    let norm = sq.sqrt();
    if norm > max_norm && norm > S::zero() {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = *x * factor;
            }
        }
    }
    norm
}
