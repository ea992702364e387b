use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fc::{BoundFcStack, FcStack};
use crate::error::{Error, Result};
use crate::nn::{Activation, Binder, BoundLinear, BoundLstm, LinearLayer, LstmCell};
use crate::perm::{apply_soft, BoundPermutationNetwork, PermutationNetwork};
use crate::{Tensor, Var};

/// LSTM over the rows of a sequence followed by a linear readout of the
/// final hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmHead {
    pub cell: LstmCell,
    pub readout: LinearLayer,
}

pub struct BoundLstmHead<'t> {
    cell: BoundLstm<'t, f64>,
    readout: BoundLinear<'t, f64>,
}

impl LstmHead {
    pub fn new(input: usize, hidden: usize, output: usize, forget_bias: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(LstmHead {
            cell: LstmCell::new(input, hidden, forget_bias, rng)?,
            readout: LinearLayer::new(hidden, output, Activation::None, rng)?,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.cell.params();
        p.extend(self.readout.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.cell.params_mut();
        p.extend(self.readout.params_mut());
        p
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let names = [
            "w_input",
            "w_forget",
            "w_output",
            "w_candidate",
            "b_input",
            "b_forget",
            "b_output",
            "b_candidate",
        ];
        let mut out: Vec<(String, &Tensor)> = names
            .iter()
            .zip(self.cell.params())
            .map(|(n, t)| (format!("lstm.{n}"), t))
            .collect();
        out.push(("readout.weight".into(), &self.readout.weight));
        out.push(("readout.bias".into(), &self.readout.bias));
        out
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t, f64>) -> Result<BoundLstmHead<'t>> {
        Ok(BoundLstmHead {
            cell: self.cell.bind(b)?,
            readout: self.readout.bind(b),
        })
    }
}

impl<'t> BoundLstmHead<'t> {
    /// `[batch, n, d] -> [batch, L]`.
    pub fn forward(&self, seq: &Var<'t>) -> Result<Var<'t>> {
        self.readout.forward(&self.cell.run(seq)?)
    }
}

/// What reads the (softly) permuted set.
#[derive(Clone, Debug, PartialEq)]
pub enum SequenceLearner {
    Lstm(LstmHead),
    /// Flattened `[n * d]` input to a fully connected stack.
    Fc(FcStack),
}

/// SPAN: the permutation network proposes `P̃ = sinkhorn(relu(X·W))` and the
/// learner reads `P̃ᵀX`. Without a permutation network the learner reads `X`
/// as given.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanModel {
    pub pn: Option<PermutationNetwork>,
    pub learner: SequenceLearner,
}

pub struct BoundSpan<'t> {
    pn: Option<BoundPermutationNetwork<'t, f64>>,
    learner: BoundLearner<'t>,
    dropout: f64,
}

enum BoundLearner<'t> {
    Lstm(BoundLstmHead<'t>),
    Fc(BoundFcStack<'t>),
}

impl SpanModel {
    pub fn learner_params(&self) -> Vec<&Tensor> {
        match &self.learner {
            SequenceLearner::Lstm(h) => h.params(),
            SequenceLearner::Fc(s) => s.params(),
        }
    }

    pub fn learner_params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.learner {
            SequenceLearner::Lstm(h) => h.params_mut(),
            SequenceLearner::Fc(s) => s.params_mut(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(pn) = &self.pn {
            out.push(("pn.weight".to_string(), &pn.weight));
        }
        match &self.learner {
            SequenceLearner::Lstm(h) => out.extend(h.named_params()),
            SequenceLearner::Fc(s) => out.extend(s.named_params("fc")),
        }
        out
    }

    pub fn bind<'t>(
        &self,
        learner: &mut Binder<'t, f64>,
        adversary: &mut Binder<'t, f64>,
        dropout: f64,
    ) -> Result<BoundSpan<'t>> {
        Ok(BoundSpan {
            pn: self.pn.as_ref().map(|pn| pn.bind(adversary)),
            learner: match &self.learner {
                SequenceLearner::Lstm(h) => BoundLearner::Lstm(h.bind(learner)?),
                SequenceLearner::Fc(s) => BoundLearner::Fc(s.bind(learner)),
            },
            dropout,
        })
    }

    /// Runs the learner on `pᵀ · x` for an explicit `p: [n, n]`.
    pub fn forward_with_permutation(&self, p: &Tensor, x: &Tensor) -> Result<Tensor> {
        let tape = crate::Tape::new();
        let bound = self.bind(&mut Binder::new(&tape, false), &mut Binder::new(&tape, false), 0.0)?;
        let seq = tape.constant(p.clone()).contract_rows(&tape.constant(x.clone()))?;
        let (n, d) = (x.rows(), x.cols());
        let out = bound.read(&seq.reshape(&[1, n, d])?, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        out.value().reshape(&[out.shape()[1]])
    }
}

impl<'t> BoundSpan<'t> {
    pub fn forward(&self, x: &Var<'t>, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        let seq = match &self.pn {
            Some(pn) => apply_soft(&pn.forward(x)?, x)?,
            None => *x,
        };
        self.read(&seq, training, rng)
    }

    fn read(&self, seq: &Var<'t>, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        match &self.learner {
            BoundLearner::Lstm(h) => h.forward(seq),
            BoundLearner::Fc(s) => {
                let shape = seq.shape();
                let flat = seq.reshape(&[shape[0], shape[1] * shape[2]])?;
                s.forward(&flat, self.dropout, training, rng)
            }
        }
    }
}

/// An LSTM trained on uniformly random orderings of each set. Inference
/// averages over `permutations` fresh orderings.
#[derive(Clone, Debug, PartialEq)]
pub struct PiSgdModel {
    pub head: LstmHead,
    pub permutations: usize,
}

pub struct BoundPiSgd<'t> {
    head: BoundLstmHead<'t>,
    permutations: usize,
}

impl PiSgdModel {
    pub fn bind<'t>(&self, learner: &mut Binder<'t, f64>) -> Result<BoundPiSgd<'t>> {
        Ok(BoundPiSgd {
            head: self.head.bind(learner)?,
            permutations: self.permutations,
        })
    }
}

/// Batch of independent uniformly random permutation matrices, laid out so
/// that `contract_rows` with it reorders each set.
fn random_orderings(batch: usize, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let mut data = vec![0.0; batch * n * n];
    let mut order: Vec<usize> = (0..n).collect();
    for b in 0..batch {
        order.shuffle(rng);
        for (j, &src) in order.iter().enumerate() {
            data[b * n * n + src * n + j] = 1.0;
        }
    }
    Tensor::new(vec![batch, n, n], data)
}

impl<'t> BoundPiSgd<'t> {
    /// Training: one random ordering per set. Otherwise the mean prediction
    /// over `permutations` orderings.
    pub fn forward(&self, x: &Var<'t>, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        let shape = x.shape();
        let &[batch, n, _] = shape.as_slice() else {
            return Err(Error::shape("pisgd_forward", &shape, &[]));
        };
        let passes = if training { 1 } else { self.permutations.max(1) };
        let tape = x.tape();
        let mut total: Option<Var<'t>> = None;
        for _ in 0..passes {
            let p = tape.constant(random_orderings(batch, n, rng)?);
            let y = self.head.forward(&p.contract_rows(x)?)?;
            total = Some(match total {
                Some(t) => t.add(&y)?,
                None => y,
            });
        }
        let total = total.expect("at least one pass");
        Ok(if passes == 1 {
            total
        } else {
            total.scale(1.0 / passes as f64)
        })
    }

    pub fn single_pass(&self, x: &Var<'t>, rng: &mut impl Rng) -> Result<Var<'t>> {
        self.forward(x, true, rng)
    }
}
