use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Places parameter tensors on a tape, as trainable leaves or as constants,
/// remembering the leaves in binding order.
pub struct Binder<'t, S: Scalar = f64> {
    tape: &'t Tape<S>,
    trainable: bool,
    leaves: Vec<Var<'t, S>>,
}

impl<'t, S: Scalar> Binder<'t, S> {
    pub fn new(tape: &'t Tape<S>, trainable: bool) -> Self {
        Binder {
            tape,
            trainable,
            leaves: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn bind(&mut self, t: &Tensor<S>) -> Var<'t, S> {
        if self.trainable {
            let v = self.tape.leaf(t.clone());
            self.leaves.push(v);
            v
        } else {
            self.tape.constant(t.clone())
        }
    }

    pub fn leaves(&self) -> &[Var<'t, S>] {
        &self.leaves
    }
}
