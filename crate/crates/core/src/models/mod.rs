//! Set learners: SPAN and its two ablations, DeepSets, k-ary Janossy pooling
//! and π-SGD, behind one [`Model`] type.
//!
//! Parameters fall into two groups. The adversary group is the permutation
//! network weight; everything else is the learner. [`Model::bind`] places
//! each group on a tape through its own [`Binder`], so either group can be
//! trained while the other stays constant.

mod checkpoint;
mod deepsets;
mod fc;
mod normalize;
mod sequence;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use deepsets::{combination_count, combinations, tuple_selectors, DeepSetsModel, JanossyModel, Pooling};
pub use fc::FcStack;
pub use normalize::Normalizer;
pub use sequence::{LstmHead, PiSgdModel, SequenceLearner, SpanModel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Binder;
use crate::perm::{PermutationNetwork, DEFAULT_SINKHORN_ITERATIONS, DEFAULT_TEMPERATURE};
use crate::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Span,
    SpanNoApn,
    SpanFc,
    Deepsets,
    Janossy,
    PiSgd,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Span,
        ModelKind::SpanNoApn,
        ModelKind::SpanFc,
        ModelKind::Deepsets,
        ModelKind::Janossy,
        ModelKind::PiSgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Span => "span",
            ModelKind::SpanNoApn => "span-no-apn",
            ModelKind::SpanFc => "span-fc",
            ModelKind::Deepsets => "deepsets",
            ModelKind::Janossy => "janossy",
            ModelKind::PiSgd => "pi-sgd",
        }
    }

    pub fn has_adversary(self) -> bool {
        matches!(self, ModelKind::Span | ModelKind::SpanFc)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// LSTM hidden size.
    pub hidden: usize,
    /// Width of every fully connected hidden layer.
    pub width: usize,
    /// Hidden layers in the DeepSets embedding stack.
    pub embed_layers: usize,
    /// Hidden layers before the linear output (DeepSets final stack, SPAN-FC).
    pub final_layers: usize,
    pub pooling: Pooling,
    pub temperature: f64,
    pub sinkhorn_iterations: usize,
    /// Janossy tuple size.
    pub arity: usize,
    /// π-SGD orderings averaged at inference.
    pub permutations: usize,
    pub forget_bias: f64,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Span,
            hidden: 128,
            width: 128,
            embed_layers: 1,
            final_layers: 1,
            pooling: Pooling::Sum,
            temperature: DEFAULT_TEMPERATURE,
            sinkhorn_iterations: DEFAULT_SINKHORN_ITERATIONS,
            arity: 2,
            permutations: 20,
            forget_bias: 1.0,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn of_kind(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if dims.set_size == 0 || dims.input_dim == 0 || dims.output_dim == 0 {
            return bad(format!("model dimensions must be positive: {dims:?}"));
        }
        if self.hidden == 0 || self.width == 0 {
            return bad("hidden and width must be positive".into());
        }
        if !(self.temperature > 0.0) || self.sinkhorn_iterations == 0 {
            return bad("sinkhorn needs temperature > 0 and at least one iteration".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.kind == ModelKind::Janossy && (self.arity == 0 || self.arity > dims.set_size) {
            return bad(format!("janossy arity {} needs 1 <= k <= n = {}", self.arity, dims.set_size));
        }
        if self.kind == ModelKind::PiSgd && self.permutations == 0 {
            return bad("pi-sgd needs at least one inference permutation".into());
        }
        Ok(())
    }
}

/// Set size `n`, element dimension `d` and output dimension `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub set_size: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Learner,
    Adversary,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Network {
    Span(SpanModel),
    DeepSets(DeepSetsModel),
    Janossy(JanossyModel),
    PiSgd(PiSgdModel),
}

/// A network together with its configuration and data normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: Dims,
    pub net: Network,
    pub normalizer: Normalizer,
}

pub struct BoundModel<'t> {
    net: BoundNetwork<'t>,
}

enum BoundNetwork<'t> {
    Span(sequence::BoundSpan<'t>),
    DeepSets(deepsets::BoundDeepSets<'t>),
    Janossy(deepsets::BoundJanossy<'t>),
    PiSgd(sequence::BoundPiSgd<'t>),
}

fn deepsets_stacks(c: &ModelConfig, input: usize, output: usize, rng: &mut impl Rng) -> Result<DeepSetsModel> {
    let phi = FcStack::new(input, c.width, c.embed_layers, None, rng)?;
    let pooled = phi.output_dim(input);
    Ok(DeepSetsModel {
        phi,
        pooling: c.pooling,
        rho: FcStack::new(pooled, c.width, c.final_layers, Some(output), rng)?,
    })
}

impl Model {
    /// Freshly initialised model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, dims: Dims, seed: u64) -> Result<Self> {
        config.validate(&dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let Dims {
            set_size: n,
            input_dim: d,
            output_dim: l,
        } = dims;
        let pn = |rng: &mut ChaCha8Rng| -> Result<PermutationNetwork> {
            Ok(PermutationNetwork::new(d, n, rng)?.with_sinkhorn(c.temperature, c.sinkhorn_iterations))
        };
        let net = match c.kind {
            ModelKind::Span => Network::Span(SpanModel {
                pn: Some(pn(&mut rng)?),
                learner: SequenceLearner::Lstm(LstmHead::new(d, c.hidden, l, c.forget_bias, &mut rng)?),
            }),
            ModelKind::SpanNoApn => Network::Span(SpanModel {
                pn: None,
                learner: SequenceLearner::Lstm(LstmHead::new(d, c.hidden, l, c.forget_bias, &mut rng)?),
            }),
            ModelKind::SpanFc => Network::Span(SpanModel {
                pn: Some(pn(&mut rng)?),
                learner: SequenceLearner::Fc(FcStack::new(n * d, c.width, c.final_layers, Some(l), &mut rng)?),
            }),
            ModelKind::Deepsets => Network::DeepSets(deepsets_stacks(c, d, l, &mut rng)?),
            ModelKind::Janossy => Network::Janossy(JanossyModel {
                arity: c.arity,
                inner: deepsets_stacks(c, c.arity * d, l, &mut rng)?,
            }),
            ModelKind::PiSgd => Network::PiSgd(PiSgdModel {
                head: LstmHead::new(d, c.hidden, l, c.forget_bias, &mut rng)?,
                permutations: c.permutations,
            }),
        };
        Ok(Model {
            config,
            dims,
            net,
            normalizer: Normalizer::identity(d, l),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    /// Permutation network, when the model has one.
    pub fn pn(&self) -> Option<&PermutationNetwork> {
        match &self.net {
            Network::Span(s) => s.pn.as_ref(),
            _ => None,
        }
    }

    pub fn pn_mut(&mut self) -> Option<&mut PermutationNetwork> {
        match &mut self.net {
            Network::Span(s) => s.pn.as_mut(),
            _ => None,
        }
    }

    /// Parameters of one group, in binding order.
    pub fn params(&self, group: Group) -> Vec<&Tensor> {
        match (group, &self.net) {
            (Group::Adversary, Network::Span(s)) => s.pn.iter().map(|p| &p.weight).collect(),
            (Group::Adversary, _) => Vec::new(),
            (Group::Learner, Network::Span(s)) => s.learner_params(),
            (Group::Learner, Network::DeepSets(m)) => m.params(),
            (Group::Learner, Network::Janossy(m)) => m.inner.params(),
            (Group::Learner, Network::PiSgd(m)) => m.head.params(),
        }
    }

    pub fn params_mut(&mut self, group: Group) -> Vec<&mut Tensor> {
        match (group, &mut self.net) {
            (Group::Adversary, Network::Span(s)) => s.pn.iter_mut().map(|p| &mut p.weight).collect(),
            (Group::Adversary, _) => Vec::new(),
            (Group::Learner, Network::Span(s)) => s.learner_params_mut(),
            (Group::Learner, Network::DeepSets(m)) => m.params_mut(),
            (Group::Learner, Network::Janossy(m)) => m.inner.params_mut(),
            (Group::Learner, Network::PiSgd(m)) => m.head.params_mut(),
        }
    }

    /// Every parameter with a stable name, adversary first.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        match &self.net {
            Network::Span(s) => s.named_params(),
            Network::DeepSets(m) => m.named_params(),
            Network::Janossy(m) => m.inner.named_params(),
            Network::PiSgd(m) => m.head.named_params(),
        }
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        let tensors: Vec<&mut Tensor> = match &mut self.net {
            Network::Span(s) => {
                let mut t: Vec<&mut Tensor> = s.pn.iter_mut().map(|p| &mut p.weight).collect();
                t.extend(match &mut s.learner {
                    SequenceLearner::Lstm(h) => h.params_mut(),
                    SequenceLearner::Fc(f) => f.params_mut(),
                });
                t
            }
            Network::DeepSets(m) => m.params_mut(),
            Network::Janossy(m) => m.inner.params_mut(),
            Network::PiSgd(m) => m.head.params_mut(),
        };
        names.into_iter().zip(tensors).collect()
    }

    /// Places the learner group through `learner` and the adversary group
    /// through `adversary`.
    pub fn bind<'t>(&self, learner: &mut Binder<'t, f64>, adversary: &mut Binder<'t, f64>) -> Result<BoundModel<'t>> {
        let rate = self.config.dropout;
        let net = match &self.net {
            Network::Span(s) => BoundNetwork::Span(s.bind(learner, adversary, rate)?),
            Network::DeepSets(m) => BoundNetwork::DeepSets(m.bind(learner, rate)),
            Network::Janossy(m) => BoundNetwork::Janossy(m.bind(learner, rate)),
            Network::PiSgd(m) => BoundNetwork::PiSgd(m.bind(learner)?),
        };
        Ok(BoundModel { net })
    }

    /// Predictions `[batch, L]` in label space for raw sets `[batch, n, d]`.
    pub fn predict(&self, x: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        self.check_input(x)?;
        let tape = Tape::new();
        let bound = self.bind(&mut Binder::new(&tape, false), &mut Binder::new(&tape, false))?;
        let out = bound.forward(&tape.constant(self.normalizer.inputs(x)), false, rng)?;
        Ok(self.normalizer.outputs(&out.value()))
    }

    /// Prediction `[L]` for one raw set `[n, d]`.
    pub fn predict_one(&self, set: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let x = set.reshape(&[1, set.rows(), set.cols()])?;
        let y = self.predict(&x, rng)?;
        y.reshape(&[self.dims.output_dim])
    }

    /// π-SGD prediction from a single random ordering; other models ignore
    /// the distinction.
    pub fn predict_one_sampled(&self, set: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let x = set.reshape(&[1, set.rows(), set.cols()])?;
        self.check_input(&x)?;
        let tape = Tape::new();
        let bound = self.bind(&mut Binder::new(&tape, false), &mut Binder::new(&tape, false))?;
        let input = tape.constant(self.normalizer.inputs(&x));
        let out = match &bound.net {
            BoundNetwork::PiSgd(p) => p.single_pass(&input, rng)?,
            _ => bound.forward(&input, false, rng)?,
        };
        self.normalizer.outputs(&out.value()).reshape(&[self.dims.output_dim])
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let Dims {
            set_size,
            input_dim,
            ..
        } = self.dims;
        match x.shape() {
            [_, n, d] if *n == set_size && *d == input_dim => Ok(()),
            s => Err(Error::shape(
                "model_forward",
                s,
                &[set_size, input_dim],
            )),
        }
    }
}

impl<'t> BoundModel<'t> {
    /// Normalised sets `[batch, n, d]` to outputs `[batch, L]` in normalised
    /// label space.
    pub fn forward(&self, x: &Var<'t>, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        match &self.net {
            BoundNetwork::Span(m) => m.forward(x, training, rng),
            BoundNetwork::DeepSets(m) => m.forward(x, training, rng),
            BoundNetwork::Janossy(m) => m.forward(x, training, rng),
            BoundNetwork::PiSgd(m) => m.forward(x, training, rng),
        }
    }
}

/// Stacks equally shaped sets `[n, d]` into a batch `[count, n, d]`.
pub fn stack_sets(sets: &[&Tensor]) -> Result<Tensor> {
    let Some(first) = sets.first() else {
        return Err(Error::invalid("cannot stack an empty batch"));
    };
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(sets.len() * first.len());
    for s in sets {
        if s.shape() != shape.as_slice() {
            return Err(Error::shape("stack_sets", &shape, s.shape()));
        }
        data.extend_from_slice(s.data());
    }
    let mut full = vec![sets.len()];
    full.extend(shape);
    Tensor::new(full, data)
}
