//! Alternating min-max training for models with a permutation adversary,
//! plain minimisation for the rest.

mod history;
mod loss;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use history::{read_history, write_history, HistoryRow, Phase};
pub use loss::{loss_eval, loss_var, LossKind};

use crate::error::{Error, Result};
use crate::models::{save_checkpoint, Checkpoint, Group, Model, Normalizer};
use crate::nn::{clip_global_norm, Binder, Direction, Optimizer, OptimizerKind};
use crate::seed::rng_for;
use crate::tasks::Dataset;
use crate::tensor::{central_gradient, relative_gradient_error};
use crate::{Tape, Tensor};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// One outer iteration is one pass over the shuffled training batches for
/// the learner (`learner_steps` updates per batch) followed by a pass over
/// the same batches, in the same order, for the adversary
/// (`adversary_steps` updates per batch).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learner_lr: f64,
    pub adversary_lr: f64,
    pub batch_size: usize,
    pub outer_iters: usize,
    pub learner_steps: usize,
    pub adversary_steps: usize,
    /// Defaults to the task's loss.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    pub learner_optimizer: OptimizerKind,
    pub adversary_optimizer: OptimizerKind,
    /// L2 penalty on the learner parameters.
    pub weight_decay: f64,
    /// Global gradient-norm cap per update; 0 disables clipping.
    pub clip_norm: f64,
    /// Scale each input feature by its inverse RMS over the training data;
    /// when off the model reads raw values.
    pub scale_inputs: bool,
    /// Keep the outer iteration with the lowest validation loss as the
    /// trained model.
    pub select_best: bool,
    pub seed: u64,
    /// Save a checkpoint every this many outer iterations; 0 never.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learner_lr: 1e-4,
            adversary_lr: 1e-4,
            batch_size: 32,
            outer_iters: 30,
            learner_steps: 1,
            adversary_steps: 1,
            loss: None,
            learner_optimizer: OptimizerKind::Adam,
            adversary_optimizer: OptimizerKind::Adam,
            weight_decay: 0.0,
            clip_norm: 5.0,
            scale_inputs: true,
            select_best: false,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.learner_lr >= 0.0 && self.adversary_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.batch_size == 0 || self.learner_steps == 0 {
            return bad("batch_size and learner_steps must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.clip_norm >= 0.0) {
            return bad("weight_decay and clip_norm must be non-negative");
        }
        Ok(())
    }

    pub fn loss_for(&self, data: &Dataset) -> Result<LossKind> {
        let loss = self.loss.unwrap_or(LossKind::for_task(data.header.task));
        let l = data.header.l;
        match loss {
            LossKind::CrossEntropy | LossKind::EigvecCosine if l < 2 => Err(Error::Config(format!(
                "{} loss needs vector labels, task has L = {l}",
                loss.name()
            ))),
            _ => Ok(loss),
        }
    }
}

/// Training data in the model's normalised space.
pub struct Prepared {
    sets: Tensor,
    labels: Tensor,
    len: usize,
}

impl Prepared {
    pub fn new(normalizer: &Normalizer, data: &Dataset) -> Result<Self> {
        let idx: Vec<usize> = (0..data.len()).collect();
        Ok(Prepared {
            sets: normalizer.inputs(&data.sets(&idx)?),
            labels: normalizer.labels(&data.labels(&idx)?),
            len: data.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sets `[B, n, d]` and labels `[B, L]` at `idx`.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let gather = |t: &Tensor| {
            let mut shape = t.shape().to_vec();
            let width: usize = shape[1..].iter().product();
            let mut data = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                data.extend_from_slice(&t.data()[i * width..(i + 1) * width]);
            }
            shape[0] = idx.len();
            Tensor::new(shape, data)
        };
        Ok((gather(&self.sets)?, gather(&self.labels)?))
    }
}

/// Shuffled full batches of outer iteration `outer_iter`; the remainder is
/// dropped.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, outer_iter: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng_for(seed, "epoch", outer_iter as u64));
    idx.chunks_exact(batch_size).map(<[usize]>::to_vec).collect()
}

/// Model, optimizer state and counters of a run in progress.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub loss: LossKind,
    pub learner_opt: Optimizer,
    pub adversary_opt: Optimizer,
    /// Completed outer iterations.
    pub outer_iter: usize,
    /// Forward passes so far; seeds the per-step randomness.
    pub step: u64,
}

fn optimizers(cfg: &TrainConfig) -> (Optimizer, Optimizer) {
    (
        Optimizer::new(cfg.learner_optimizer, cfg.learner_lr).with_weight_decay(cfg.weight_decay),
        Optimizer::new(cfg.adversary_optimizer, cfg.adversary_lr),
    )
}

const OPT_PREFIX: [(&str, Group); 2] = [("optim.learner", Group::Learner), ("optim.adversary", Group::Adversary)];

impl TrainState {
    /// Fits the model's normaliser on `data` and starts fresh optimizers.
    pub fn new(mut model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let loss = cfg.loss_for(data)?;
        check_dims(&model, data)?;
        model.normalizer = Normalizer::fit(&data.all_sets(), &data.all_labels(), loss.standardizes_labels())?;
        if !cfg.scale_inputs {
            model.normalizer.input_scale.fill(1.0);
        }
        let (learner_opt, adversary_opt) = optimizers(cfg);
        Ok(TrainState {
            model,
            loss,
            learner_opt,
            adversary_opt,
            outer_iter: 0,
            step: 0,
        })
    }

    fn opt(&mut self, group: Group) -> &mut Optimizer {
        match group {
            Group::Learner => &mut self.learner_opt,
            Group::Adversary => &mut self.adversary_opt,
        }
    }

    /// Snapshot with optimizer moments in `extra` and counters in `meta`.
    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let mut extra = BTreeMap::new();
        for (prefix, opt) in [(OPT_PREFIX[0].0, &self.learner_opt), (OPT_PREFIX[1].0, &self.adversary_opt)] {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                extra.insert(format!("{prefix}.m.{i:03}"), m.clone());
                extra.insert(format!("{prefix}.v.{i:03}"), v.clone());
            }
        }
        Checkpoint {
            model: self.model.clone(),
            seed,
            extra,
            meta: serde_json::json!({
                "loss": self.loss,
                "outer_iter": self.outer_iter,
                "step": self.step,
                "learner_opt_step": self.learner_opt.step,
                "adversary_opt_step": self.adversary_opt.step,
            }),
        }
    }

    /// Resumes from a checkpoint written by [`TrainState::checkpoint`];
    /// optimizer hyperparameters come from `cfg`.
    pub fn from_checkpoint(ckpt: Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let meta = &ckpt.meta;
        let field = |key: &str| {
            meta.get(key)
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| Error::Format(format!("checkpoint meta lacks {key}")))
        };
        let loss: LossKind = serde_json::from_value(meta.get("loss").cloned().unwrap_or_default())
            .map_err(|_| Error::Format("checkpoint meta lacks a loss kind".into()))?;
        let (mut learner_opt, mut adversary_opt) = optimizers(cfg);
        learner_opt.step = field("learner_opt_step")?;
        adversary_opt.step = field("adversary_opt_step")?;
        let mut state = TrainState {
            model: ckpt.model,
            loss,
            learner_opt,
            adversary_opt,
            outer_iter: field("outer_iter")? as usize,
            step: field("step")?,
        };
        for (prefix, group) in OPT_PREFIX {
            let shapes: Vec<Vec<usize>> = state.model.params(group).iter().map(|p| p.shape().to_vec()).collect();
            let take = |kind: &str, i: usize| ckpt.extra.get(&format!("{prefix}.{kind}.{i:03}")).cloned();
            if take("m", 0).is_none() {
                continue;
            }
            let mut m = Vec::with_capacity(shapes.len());
            let mut v = Vec::with_capacity(shapes.len());
            for (i, shape) in shapes.iter().enumerate() {
                match (take("m", i), take("v", i)) {
                    (Some(a), Some(b)) if a.shape() == shape.as_slice() && b.shape() == shape.as_slice() => {
                        m.push(a);
                        v.push(b);
                    }
                    _ => return Err(Error::Format(format!("optimizer state {prefix}.{i:03} missing or misshapen"))),
                }
            }
            let opt = state.opt(group);
            opt.m = m;
            opt.v = v;
        }
        Ok(state)
    }
}

fn check_dims(model: &Model, data: &Dataset) -> Result<()> {
    let h = &data.header;
    let dims = &model.dims;
    if (dims.set_size, dims.input_dim, dims.output_dim) != (h.n, h.d, h.l) {
        return Err(Error::Config(format!(
            "model expects sets {}x{} with {} outputs, data has {}x{} with {}",
            dims.set_size, dims.input_dim, dims.output_dim, h.n, h.d, h.l
        )));
    }
    Ok(())
}

/// Loss of `model` on normalised batch `(x, y)`.
pub fn batch_loss(model: &Model, loss: LossKind, x: &Tensor, y: &Tensor, training: bool, rng: &mut impl rand::Rng) -> Result<f64> {
    let tape = Tape::new();
    let bound = model.bind(&mut Binder::new(&tape, false), &mut Binder::new(&tape, false))?;
    let pred = bound.forward(&tape.constant(x.clone()), training, rng)?;
    loss_var(loss, &pred, &tape.constant(y.clone()))?.value().item()
}

/// Gradient of the batch loss with respect to one parameter group, the other
/// held constant. Returns the loss and the gradients in binding order.
pub fn group_gradients(model: &Model, group: Group, loss: LossKind, x: &Tensor, y: &Tensor, training: bool, rng: &mut impl rand::Rng) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let mut learner = Binder::new(&tape, group == Group::Learner);
    let mut adversary = Binder::new(&tape, group == Group::Adversary);
    let bound = model.bind(&mut learner, &mut adversary)?;
    let pred = bound.forward(&tape.constant(x.clone()), training, rng)?;
    let value = loss_var(loss, &pred, &tape.constant(y.clone()))?;
    let grads = tape.backward(value)?;
    let leaves = match group {
        Group::Learner => learner.leaves(),
        Group::Adversary => adversary.leaves(),
    };
    let g = leaves.iter().map(|&leaf| grads.wrt(leaf)).collect::<Result<Vec<_>>>()?;
    Ok((value.value().item()?, g))
}

impl TrainState {
    /// One optimizer update of `group` on a normalised batch. The learner
    /// descends, the adversary ascends. Returns the loss before the update.
    pub fn update(&mut self, group: Group, x: &Tensor, y: &Tensor, cfg: &TrainConfig, batch: usize) -> Result<f64> {
        let mut rng = rng_for(cfg.seed, "step", self.step);
        self.step += 1;
        let (value, mut grads) = group_gradients(&self.model, group, self.loss, x, y, true, &mut rng)?;
        if !value.is_finite() || value > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                outer_iter: self.outer_iter,
                phase: match group {
                    Group::Learner => Phase::Learner.name(),
                    Group::Adversary => Phase::Adversary.name(),
                },
                batch,
                loss: value,
            });
        }
        if cfg.clip_norm > 0.0 {
            clip_global_norm(&mut grads, cfg.clip_norm);
        }
        let direction = match group {
            Group::Learner => Direction::Minimize,
            Group::Adversary => Direction::Maximize,
        };
        let mut opt = std::mem::replace(self.opt(group), Optimizer::sgd(0.0));
        let result = opt.step(&mut self.model.params_mut(group), &grads, direction);
        *self.opt(group) = opt;
        result?;
        Ok(value)
    }

    /// One outer iteration: the learner phase, then, for models with an
    /// adversary, the adversary phase over the same batches.
    pub fn outer_iteration(&mut self, data: &Prepared, cfg: &TrainConfig) -> Result<Vec<HistoryRow>> {
        let batches = epoch_batches(data.len(), cfg.batch_size, cfg.seed, self.outer_iter);
        if batches.is_empty() {
            return Err(Error::invalid(format!(
                "{} training sets do not fill one batch of {}",
                data.len(),
                cfg.batch_size
            )));
        }
        let mut rows = Vec::new();
        let mut phases = vec![(Phase::Learner, Group::Learner, cfg.learner_steps)];
        if self.model.kind().has_adversary() && cfg.adversary_steps > 0 {
            phases.push((Phase::Adversary, Group::Adversary, cfg.adversary_steps));
        }
        for (phase, group, steps) in phases {
            let mut step = 0;
            for (b, idx) in batches.iter().enumerate() {
                let (x, y) = data.batch(idx)?;
                for _ in 0..steps {
                    let batch_loss = self.update(group, &x, &y, cfg, b)?;
                    rows.push(HistoryRow {
                        outer_iter: self.outer_iter,
                        phase,
                        step,
                        batch_loss,
                    });
                    step += 1;
                }
            }
        }
        self.outer_iter += 1;
        Ok(rows)
    }
}

/// Runs outer iterations until `cfg.outer_iters` are complete, saving a
/// checkpoint under `checkpoints/outer-NNNN` at the configured cadence.
pub fn train(state: &mut TrainState, data: &Dataset, cfg: &TrainConfig, checkpoints: Option<&Path>) -> Result<Vec<HistoryRow>> {
    check_dims(&state.model, data)?;
    let prepared = Prepared::new(&state.model.normalizer, data)?;
    let mut history = Vec::new();
    while state.outer_iter < cfg.outer_iters {
        history.extend(state.outer_iteration(&prepared, cfg)?);
        if let Some(dir) = checkpoints {
            if cfg.checkpoint_every > 0 && state.outer_iter % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("outer-{:04}", state.outer_iter)), &state.checkpoint(cfg.seed))?;
            }
        }
    }
    Ok(history)
}

/// Validation loss of `model`: the mean per-set loss on `val`.
pub fn validation_loss(model: &Model, loss: LossKind, val: &Dataset, seed: u64) -> Result<f64> {
    let metrics = crate::eval::evaluate(model, val, loss, seed)?;
    Ok(metrics.iter().find(|(m, _)| m == "loss").map_or(f64::INFINITY, |(_, v)| *v))
}

/// Trained state together with the snapshot of lowest validation loss.
#[derive(Clone, Debug)]
pub struct Selected {
    pub history: Vec<HistoryRow>,
    /// Snapshot after the outer iteration with the lowest validation loss;
    /// ties keep the earlier one.
    pub best: TrainState,
    pub best_val_loss: f64,
    /// Validation loss after each outer iteration run here.
    pub val_losses: Vec<f64>,
}

/// [`train`] that measures the validation loss after every outer iteration
/// and keeps the best snapshot. `state` ends at the final iteration.
pub fn train_select(
    state: &mut TrainState,
    data: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    checkpoints: Option<&Path>,
) -> Result<Selected> {
    check_dims(&state.model, data)?;
    check_dims(&state.model, val)?;
    let prepared = Prepared::new(&state.model.normalizer, data)?;
    let mut history = Vec::new();
    let mut val_losses = Vec::new();
    let mut best = (state.clone(), validation_loss(&state.model, state.loss, val, cfg.seed)?);
    while state.outer_iter < cfg.outer_iters {
        history.extend(state.outer_iteration(&prepared, cfg)?);
        let v = validation_loss(&state.model, state.loss, val, cfg.seed)?;
        val_losses.push(v);
        if v < best.1 {
            best = (state.clone(), v);
        }
        if let Some(dir) = checkpoints {
            if cfg.checkpoint_every > 0 && state.outer_iter % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("outer-{:04}", state.outer_iter)), &state.checkpoint(cfg.seed))?;
            }
        }
    }
    Ok(Selected {
        history,
        best: best.0,
        best_val_loss: best.1,
        val_losses,
    })
}

/// Min-max training of a model with a permutation adversary.
pub fn train_span(model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<HistoryRow>)> {
    if !model.kind().has_adversary() {
        return Err(Error::Config(format!("{} has no adversary; use train_standard", model.kind())));
    }
    let mut state = TrainState::new(model, data, cfg)?;
    let history = train(&mut state, data, cfg, None)?;
    Ok((state.model, history))
}

/// Plain minimisation for models without an adversary.
pub fn train_standard(model: Model, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, Vec<HistoryRow>)> {
    if model.kind().has_adversary() {
        return Err(Error::Config(format!("{} has an adversary; use train_span", model.kind())));
    }
    let mut state = TrainState::new(model, data, cfg)?;
    let history = train(&mut state, data, cfg, None)?;
    Ok((state.model, history))
}

/// Worst relative error between tape gradients of the batch loss and
/// central differences with step `h`, over every parameter of both groups.
pub fn gradient_check(model: &Model, loss: LossKind, x: &Tensor, y: &Tensor, h: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for group in [Group::Adversary, Group::Learner] {
        let (_, analytic) = group_gradients(model, group, loss, x, y, false, &mut rng_for(0, "gradcheck", 0))?;
        for (slot, g) in analytic.iter().enumerate() {
            let numeric = central_gradient(
                |p: &Tensor| {
                    let mut m = model.clone();
                    *m.params_mut(group)[slot] = p.clone();
                    batch_loss(&m, loss, x, y, false, &mut rng_for(0, "gradcheck", 0))
                },
                model.params(group)[slot],
                h,
            )?;
            worst = worst.max(relative_gradient_error(g, &numeric));
        }
    }
    Ok(worst)
}
