use rand::Rng;

use super::init::xavier_init_with;
use super::Binder;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{concat, Tape, Tensor, Var};

/// Single-layer LSTM cell. Each gate has its own `[input + hidden, hidden]`
/// weight block (rows ordered input first, then previous hidden state) and a
/// `[hidden]` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell<S: Scalar = f64> {
    pub w_input: Tensor<S>,
    pub w_forget: Tensor<S>,
    pub w_output: Tensor<S>,
    pub w_candidate: Tensor<S>,
    pub b_input: Tensor<S>,
    pub b_forget: Tensor<S>,
    pub b_output: Tensor<S>,
    pub b_candidate: Tensor<S>,
}

/// An [`LstmCell`] whose gate blocks have been fused on a tape.
pub struct BoundLstm<'t, S: Scalar> {
    weight: Var<'t, S>,
    bias: Var<'t, S>,
    input_dim: usize,
    hidden: usize,
}

impl<S: Scalar> LstmCell<S> {
    pub fn new(input_dim: usize, hidden: usize, forget_bias: f64, rng: &mut impl Rng) -> Result<Self> {
        let shape = [input_dim + hidden, hidden];
        Ok(LstmCell {
            w_input: xavier_init_with(&shape, rng)?,
            w_forget: xavier_init_with(&shape, rng)?,
            w_output: xavier_init_with(&shape, rng)?,
            w_candidate: xavier_init_with(&shape, rng)?,
            b_input: Tensor::zeros(&[hidden]),
            b_forget: Tensor::full(&[hidden], S::lit(forget_bias)),
            b_output: Tensor::zeros(&[hidden]),
            b_candidate: Tensor::zeros(&[hidden]),
        })
    }

    /// Cell with every weight and bias equal to zero.
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[input_dim + hidden, hidden]);
        let b = Tensor::zeros(&[hidden]);
        LstmCell {
            w_input: w.clone(),
            w_forget: w.clone(),
            w_output: w.clone(),
            w_candidate: w,
            b_input: b.clone(),
            b_forget: b.clone(),
            b_output: b.clone(),
            b_candidate: b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_input.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.shape()[0] - self.hidden()
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        vec![
            &self.w_input,
            &self.w_forget,
            &self.w_output,
            &self.w_candidate,
            &self.b_input,
            &self.b_forget,
            &self.b_output,
            &self.b_candidate,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![
            &mut self.w_input,
            &mut self.w_forget,
            &mut self.w_output,
            &mut self.w_candidate,
            &mut self.b_input,
            &mut self.b_forget,
            &mut self.b_output,
            &mut self.b_candidate,
        ]
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t, S>) -> Result<BoundLstm<'t, S>> {
        let ws: Vec<Var<'t, S>> = [&self.w_input, &self.w_forget, &self.w_output, &self.w_candidate]
            .into_iter()
            .map(|w| b.bind(w))
            .collect();
        let bs: Vec<Var<'t, S>> = [&self.b_input, &self.b_forget, &self.b_output, &self.b_candidate]
            .into_iter()
            .map(|w| b.bind(w))
            .collect();
        Ok(BoundLstm {
            weight: concat(&ws, 1)?,
            bias: concat(&bs, 0)?,
            input_dim: self.input_dim(),
            hidden: self.hidden(),
        })
    }

    /// Final hidden state after reading the rows of `sequence: [n, d]` in
    /// order, starting from zero hidden and cell states.
    pub fn forward(&self, sequence: &Tensor<S>) -> Result<Tensor<S>> {
        if sequence.rank() != 2 {
            return Err(Error::shape("lstm", sequence.shape(), &[self.input_dim()]));
        }
        let tape = Tape::new();
        let mut binder = Binder::new(&tape, false);
        let cell = self.bind(&mut binder)?;
        let seq = tape.constant(sequence.reshape(&[1, sequence.shape()[0], sequence.shape()[1]])?);
        let h = cell.run(&seq)?;
        h.value().reshape(&[self.hidden()])
    }
}

impl<'t, S: Scalar> BoundLstm<'t, S> {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One recurrence step on `x: [batch, d]`, returning the new `(h, c)`.
    pub fn step(&self, x: &Var<'t, S>, h: &Var<'t, S>, c: &Var<'t, S>) -> Result<(Var<'t, S>, Var<'t, S>)> {
        let batch = x.shape()[0];
        let hd = self.hidden;
        let z = concat(&[*x, *h], 1)?
            .matmul(&self.weight)?
            .add(&self.bias.repeat(0, batch)?)?;
        let i = z.slice(1, 0, hd)?.sigmoid();
        let f = z.slice(1, hd, hd)?.sigmoid();
        let o = z.slice(1, 2 * hd, hd)?.sigmoid();
        let g = z.slice(1, 3 * hd, hd)?.tanh();
        let c = f.mul(c)?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.tanh())?;
        Ok((h, c))
    }

    /// Runs a batch of sequences `[batch, n, d]` and returns `h_n: [batch, hidden]`.
    pub fn run(&self, seq: &Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = seq.shape();
        let &[batch, n, d] = shape.as_slice() else {
            return Err(Error::shape("lstm", &shape, &[self.input_dim]));
        };
        if d != self.input_dim {
            return Err(Error::shape("lstm", &shape, &[self.input_dim]));
        }
        let tape = seq.tape();
        let mut h = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let mut c = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        for t in 0..n {
            let x = seq.slice(1, t, 1)?.reshape(&[batch, d])?;
            (h, c) = self.step(&x, &h, &c)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_state() {
        let cell = LstmCell::<f64>::zeros(3, 4);
        let seq = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 9.0]]).unwrap();
        let h = cell.forward(&seq).unwrap();
        assert!(h.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_step_matches_manual_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = LstmCell::<f64>::new(2, 3, 1.0, &mut rng).unwrap();
        let x = [0.3, -0.7];
        let h = cell.forward(&Tensor::from_rows(&[x.to_vec()]).unwrap()).unwrap();
        let gate = |w: &Tensor<f64>, b: &Tensor<f64>, j: usize| -> f64 {
            b.data()[j] + x[0] * w.at(0, j) + x[1] * w.at(1, j)
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        for j in 0..3 {
            let i = sig(gate(&cell.w_input, &cell.b_input, j));
            let o = sig(gate(&cell.w_output, &cell.b_output, j));
            let g = gate(&cell.w_candidate, &cell.b_candidate, j).tanh();
            let want = o * (i * g).tanh();
            assert!((h.data()[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn input_dim_mismatch() {
        let cell = LstmCell::<f64>::zeros(3, 2);
        let seq = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(cell.forward(&seq), Err(Error::Shape { op: "lstm", .. })));
    }

    #[test]
    fn reversal_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cell = LstmCell::<f64>::new(2, 5, 1.0, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3 - 0.5, (i * i) as f64 * 0.1]).collect();
        let mut rev = rows.clone();
        rev.reverse();
        let a = cell.forward(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let b = cell.forward(&Tensor::from_rows(&rev).unwrap()).unwrap();
        assert_ne!(a, b);
    }
}
