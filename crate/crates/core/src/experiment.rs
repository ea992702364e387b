//! Experiment configuration files and the operations behind each command.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{ablation_fractions, aggregate, evaluate, invariance_delta, write_plot_data, write_results, MetricRow};
use crate::models::{load_checkpoint, save_checkpoint, Dims, Model, ModelConfig, ModelKind};
use crate::seed::derive_seed;
use crate::tasks::{digits, flow, verify_dataset, Dataset, TaskConfig, TaskKind, Verification};
use crate::train::{gradient_check, train, train_select, validation_loss, write_history, LossKind, TrainConfig, TrainState};
use crate::Tensor;

/// Fractions of the data for training and validation when no separate test
/// set is generated; the rest is the test split.
pub const SPLIT: (f64, f64) = (0.8, 0.1);
/// Validation share of the main dataset when a separate test set exists.
pub const VALIDATION_SHARE: f64 = 0.1;
/// Invariance threshold reported alongside the Δ statistic.
pub const DELTA_THRESHOLD: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Random reorderings per set for the invariance statistic.
    pub permutations: usize,
    /// Test sets on which the invariance statistic is measured.
    pub invariance_sets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            permutations: 20,
            invariance_sets: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Model kinds to compare; empty means the `model` block's kind.
    pub models: Vec<ModelKind>,
    /// Applied to both the LSTM hidden size and the fully connected width.
    pub widths: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub weight_decays: Vec<f64>,
    /// One full sweep per seed; results report mean and spread over seeds.
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            models: Vec::new(),
            widths: vec![64, 128],
            dropouts: vec![0.5, 0.2, 0.0],
            weight_decays: vec![0.0, 0.1, 0.01, 1.0],
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output: PathBuf,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output: PathBuf::from("runs/default"),
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().lines().map(str::trim).collect::<Vec<_>>().join(" "))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_error)
    }

    /// Element width, set size and label width the task produces.
    pub fn dims(&self) -> Dims {
        let t = &self.task;
        let (d, l) = match t.kind {
            TaskKind::Kary => (t.d, 1),
            TaskKind::Percentile => (1, 1),
            TaskKind::Maxflow => (t.vertices + flow::GRAPH_EMBEDDING_DIM, 1),
            TaskKind::Spiked => (t.d, t.d),
            TaskKind::Maxdigit if t.mnist_images.is_some() => (28 * 28, digits::DIGIT_CLASSES),
            TaskKind::Maxdigit => (digits::GLYPH_ROWS * digits::GLYPH_COLS, digits::DIGIT_CLASSES),
        };
        Dims {
            set_size: t.n,
            input_dim: d,
            output_dim: l,
        }
    }

    pub fn loss(&self) -> LossKind {
        self.train.loss.unwrap_or(LossKind::for_task(self.task.kind))
    }

    /// Checks every block and their compatibility before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        let dims = self.dims();
        self.model.validate(&dims)?;
        let loss = self.loss();
        if loss != LossKind::Mse && dims.output_dim < 2 {
            return Err(Error::Config(format!(
                "{} loss does not fit the scalar {} task",
                loss.name(),
                self.task.kind
            )));
        }
        if self.task.kind == TaskKind::Maxdigit && loss != LossKind::CrossEntropy {
            return Err(Error::Config("the max-digit task trains with cross-entropy".into()));
        }
        if self.eval.permutations < 2 {
            return Err(Error::Config("eval.permutations must be at least 2".into()));
        }
        for m in &self.sweep.models {
            ModelConfig::of_kind(*m).validate(&dims)?;
        }
        Ok(())
    }
}

/// Train, validation and test data of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Generates the task data and splits it. With `test_count` the main
/// dataset gives train and validation and the test set is generated
/// separately; otherwise the main dataset is split 80/10/10.
pub fn make_splits(task: &TaskConfig) -> Result<Splits> {
    let data = task.generate()?;
    let seed = derive_seed(task.seed, "split", 0);
    match task.generate_test()? {
        Some(test) => {
            let (train, val, _) = data.split(seed, 1.0 - VALIDATION_SHARE, VALIDATION_SHARE);
            Ok(Splits { train, val, test })
        }
        None => {
            let (train, val, test) = data.split(seed, SPLIT.0, SPLIT.1);
            Ok(Splits { train, val, test })
        }
    }
}

/// Everything needed to reproduce a command's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: serde_json::Value,
}

pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        seeds: serde_json::json!({
            "task": cfg.task.seed,
            "model": cfg.train.seed,
            "train": cfg.train.seed,
            "eval": cfg.eval.seed,
            "sweep": cfg.sweep.seeds,
        }),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(format!("manifest-{command}.json")), text + "\n")?;
    Ok(())
}

/// Writes `train.jsonl`, `val.jsonl` and `test.jsonl` into `out`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Splits> {
    cfg.validate()?;
    let splits = make_splits(&cfg.task)?;
    std::fs::create_dir_all(out)?;
    for (name, ds) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        ds.save(&out.join(format!("{name}.jsonl")))?;
    }
    write_manifest(out, "gen", cfg)?;
    Ok(splits)
}

fn fresh_model(cfg: &ExperimentConfig, model: &ModelConfig) -> Result<Model> {
    Model::new(model.clone(), cfg.dims(), derive_seed(cfg.train.seed, "model-init", 0))
}

/// Directory of the lowest-validation-loss snapshot under a train output.
pub const BEST_CHECKPOINT: &str = "best";

/// Checkpoint that `eval` uses by default for a train output directory.
pub fn default_checkpoint(cfg: &ExperimentConfig, train_out: &Path) -> PathBuf {
    train_out.join(if cfg.train.select_best { BEST_CHECKPOINT } else { "checkpoint" })
}

/// Trains (or resumes from `resume`) and writes `checkpoint/` and
/// `history.csv` into `out`, plus `best/` when `select_best` is set.
/// Returns the final training state.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<TrainState> {
    cfg.validate()?;
    let splits = make_splits(&cfg.task)?;
    let mut state = match resume {
        Some(dir) => {
            let state = TrainState::from_checkpoint(load_checkpoint(dir)?, &cfg.train)?;
            if state.model.config != cfg.model || state.model.dims != cfg.dims() {
                return Err(Error::Config("checkpoint model does not match the config".into()));
            }
            state
        }
        None => TrainState::new(fresh_model(cfg, &cfg.model)?, &splits.train, &cfg.train)?,
    };
    std::fs::create_dir_all(out)?;
    let snapshots = out.join("snapshots");
    let history = if cfg.train.select_best {
        let selected = train_select(&mut state, &splits.train, &splits.val, &cfg.train, Some(&snapshots))?;
        save_checkpoint(&out.join(BEST_CHECKPOINT), &selected.best.checkpoint(cfg.train.seed))?;
        selected.history
    } else {
        train(&mut state, &splits.train, &cfg.train, Some(&snapshots))?
    };
    save_checkpoint(&out.join("checkpoint"), &state.checkpoint(cfg.train.seed))?;
    write_history(&out.join("history.csv"), &history)?;
    write_manifest(out, "train", cfg)?;
    Ok(state)
}

/// Test-split metrics of a trained model, plus the invariance statistic
/// and, for max-digit data, the max/last/other fractions.
pub fn evaluation_rows(cfg: &ExperimentConfig, model: &Model, test: &Dataset, seed: u64) -> Result<Vec<MetricRow>> {
    let row = |metric: &str, value: f64| MetricRow {
        task: cfg.task.kind.to_string(),
        model: model.kind().to_string(),
        seed,
        n: test.header.n,
        d: test.header.d,
        metric: metric.into(),
        value,
        std: 0.0,
    };
    let mut rows: Vec<MetricRow> = evaluate(model, test, cfg.loss(), seed)?
        .into_iter()
        .map(|(m, v)| row(&m, v))
        .collect();
    let deltas = invariance_deltas(model, test, cfg.eval.invariance_sets, cfg.eval.permutations, seed)?;
    if !deltas.is_empty() {
        let within = deltas.iter().filter(|&&d| d <= DELTA_THRESHOLD).count();
        let mut sorted = deltas.clone();
        sorted.sort_by(f64::total_cmp);
        rows.push(row("delta_median", sorted[sorted.len() / 2]));
        rows.push(row("delta_max", sorted[sorted.len() - 1]));
        rows.push(row("delta_within_1e-2", within as f64 / deltas.len() as f64));
    }
    if test.header.task == TaskKind::Maxdigit {
        let f = ablation_fractions(model, test, seed)?;
        rows.push(row("fraction_max", f.max));
        rows.push(row("fraction_last", f.last));
        rows.push(row("fraction_other", f.other));
    }
    Ok(rows)
}

/// Δ ratio on the first `sets` instances of `data`.
pub fn invariance_deltas(model: &Model, data: &Dataset, sets: usize, permutations: usize, seed: u64) -> Result<Vec<f64>> {
    data.instances
        .iter()
        .take(sets)
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "invariance", i as u64));
            Ok(invariance_delta(model, &inst.set, permutations, &mut rng)?.ratio)
        })
        .collect()
}

/// Evaluates the checkpoint at `checkpoint` on the test split and writes
/// `results.csv` into `out`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.model.dims != cfg.dims() {
        return Err(Error::Config("checkpoint dims do not match the task".into()));
    }
    let splits = make_splits(&cfg.task)?;
    let rows = evaluation_rows(cfg, &ckpt.model, &splits.test, cfg.eval.seed)?;
    std::fs::create_dir_all(out)?;
    write_results(&out.join("results.csv"), &rows)?;
    write_manifest(out, "eval", cfg)?;
    Ok(rows)
}

/// Verifies one dataset file, or every `.jsonl` file of a directory.
pub fn cmd_oracle_verify(path: &Path) -> Result<Vec<(PathBuf, Verification)>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        v.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::invalid(format!("no dataset files under {}", path.display())));
    }
    files
        .into_iter()
        .map(|f| {
            let v = verify_dataset(&Dataset::load(&f)?)?;
            Ok((f, v))
        })
        .collect()
}

/// Finite-difference check of the configured model on one random batch of
/// four sets.
pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<f64> {
    let dims = cfg.dims();
    cfg.model.validate(&dims)?;
    let model = fresh_model(cfg, &cfg.model)?;
    let loss = cfg.loss();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, "gradcheck-data", 0));
    let normal = rand_distr::StandardNormal;
    let x = Tensor::new(
        vec![4, dims.set_size, dims.input_dim],
        (0..4 * dims.set_size * dims.input_dim).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect(),
    )?;
    let y_data: Vec<f64> = match loss {
        LossKind::CrossEntropy => (0..4).flat_map(|i| {
            let mut v = vec![0.0; dims.output_dim];
            v[i % dims.output_dim] = 1.0;
            v
        }).collect(),
        _ => (0..4 * dims.output_dim).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect(),
    };
    let y = Tensor::new(vec![4, dims.output_dim], y_data)?;
    gradient_check(&model, loss, &x, &y, GRADCHECK_STEP)
}

/// Central-difference step of [`cmd_gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Largest accepted relative error of [`cmd_gradcheck`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// One grid point of a sweep and its validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub model: String,
    pub seed: u64,
    pub width: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub val_loss: f64,
}

/// Trains every grid point, keeps the lowest validation loss per model and
/// seed, and reports the winners' test metrics (per run and aggregated) in
/// `results.csv`, every grid point in `sweep.csv`, and a plot table of test
/// metric against width in `plot-<metric>.dat`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let s = &cfg.sweep;
    if s.widths.is_empty() || s.dropouts.is_empty() || s.weight_decays.is_empty() || s.seeds.is_empty() {
        return Err(Error::Config("every sweep grid needs at least one value".into()));
    }
    let models = if s.models.is_empty() { vec![cfg.model.kind] } else { s.models.clone() };
    let mut grid = Vec::new();
    for &kind in &models {
        for &seed in &s.seeds {
            for &width in &s.widths {
                for &dropout in &s.dropouts {
                    for &weight_decay in &s.weight_decays {
                        grid.push((kind, seed, width, dropout, weight_decay));
                    }
                }
            }
        }
    }
    let run_point = |&(kind, seed, width, dropout, weight_decay): &(ModelKind, u64, usize, f64, f64)| -> Result<(SweepPoint, Vec<MetricRow>)> {
        let mut point_cfg = cfg.clone();
        point_cfg.task.seed = seed;
        point_cfg.train.seed = seed;
        point_cfg.train.weight_decay = weight_decay;
        point_cfg.model = ModelConfig {
            kind,
            hidden: width,
            width,
            dropout,
            ..cfg.model.clone()
        };
        point_cfg.model.validate(&point_cfg.dims())?;
        let splits = make_splits(&point_cfg.task)?;
        let mut state = TrainState::new(fresh_model(&point_cfg, &point_cfg.model)?, &splits.train, &point_cfg.train)?;
        let val_loss = if point_cfg.train.select_best {
            let selected = train_select(&mut state, &splits.train, &splits.val, &point_cfg.train, None)?;
            state = selected.best;
            selected.best_val_loss
        } else {
            train(&mut state, &splits.train, &point_cfg.train, None)?;
            validation_loss(&state.model, point_cfg.loss(), &splits.val, cfg.eval.seed)?
        };
        let test_rows = evaluation_rows(&point_cfg, &state.model, &splits.test, seed)?;
        Ok((
            SweepPoint {
                model: kind.to_string(),
                seed,
                width,
                dropout,
                weight_decay,
                val_loss,
            },
            test_rows,
        ))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(crate::eval::eval_threads())
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<(SweepPoint, Vec<MetricRow>)> = pool.install(|| grid.par_iter().map(run_point).collect::<Result<_>>())?;

    let mut winners: Vec<&(SweepPoint, Vec<MetricRow>)> = Vec::new();
    for kind in &models {
        for &seed in &s.seeds {
            let best = results
                .iter()
                .filter(|(p, _)| p.model == kind.to_string() && p.seed == seed)
                .min_by(|a, b| a.0.val_loss.total_cmp(&b.0.val_loss))
                .expect("grid is non-empty");
            winners.push(best);
        }
    }
    let per_run: Vec<MetricRow> = winners.iter().flat_map(|(_, rows)| rows.iter().cloned()).collect();
    let mut rows = per_run.clone();
    if s.seeds.len() > 1 {
        rows.extend(aggregate(&per_run));
    }
    std::fs::create_dir_all(out)?;
    write_results(&out.join("results.csv"), &rows)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(|e| Error::Format(e.to_string()))?;
    for (p, _) in &results {
        w.serialize(p).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    write_sweep_plots(out, &models, &results)?;
    write_manifest(out, "sweep", cfg)?;
    Ok(rows)
}

/// Best test value per width and model for every metric, one table per
/// metric.
fn write_sweep_plots(out: &Path, models: &[ModelKind], results: &[(SweepPoint, Vec<MetricRow>)]) -> Result<()> {
    let mut widths: Vec<usize> = results.iter().map(|(p, _)| p.width).collect();
    widths.sort_unstable();
    widths.dedup();
    let mut metrics: Vec<String> = results.iter().flat_map(|(_, r)| r.iter().map(|m| m.metric.clone())).collect();
    metrics.sort();
    metrics.dedup();
    for metric in metrics {
        let series: Vec<(String, Vec<f64>)> = models
            .iter()
            .map(|kind| {
                let ys = widths
                    .iter()
                    .map(|&w| {
                        results
                            .iter()
                            .filter(|(p, _)| p.model == kind.to_string() && p.width == w)
                            .min_by(|a, b| a.0.val_loss.total_cmp(&b.0.val_loss))
                            .and_then(|(_, rows)| rows.iter().find(|r| r.metric == metric))
                            .map_or(f64::NAN, |r| r.value)
                    })
                    .collect();
                (kind.to_string(), ys)
            })
            .collect();
        let xs: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
        write_plot_data(&out.join(format!("plot-{metric}.dat")), "width", &xs, &series)?;
    }
    Ok(())
}
