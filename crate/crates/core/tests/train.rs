use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanlab::models::{load_checkpoint, save_checkpoint, Dims, Group, Model, ModelConfig, ModelKind};
use spanlab::nn::{Direction, Optimizer};
use spanlab::tasks::{Dataset, DatasetHeader, SetInstance, TaskConfig, TaskKind};
use spanlab::train::*;
use spanlab::Tensor;

fn small(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        hidden: 8,
        width: 8,
        sinkhorn_iterations: 10,
        temperature: 1.0,
        ..ModelConfig::of_kind(kind)
    }
}

fn percentile_data(n: usize, count: usize, seed: u64) -> Dataset {
    TaskConfig {
        kind: TaskKind::Percentile,
        n,
        count,
        seed,
        ..TaskConfig::default()
    }
    .generate()
    .unwrap()
}

fn model_for(kind: ModelKind, data: &Dataset, seed: u64) -> Model {
    let h = &data.header;
    let dims = Dims {
        set_size: h.n,
        input_dim: h.d,
        output_dim: h.l,
    };
    Model::new(small(kind), dims, seed).unwrap()
}

#[test]
fn small_adversary_ascent_step_does_not_lower_the_loss() {
    let data = percentile_data(6, 64, 1);
    for seed in 0..10 {
        let cfg = TrainConfig::default();
        let mut state = TrainState::new(model_for(ModelKind::Span, &data, seed), &data, &cfg).unwrap();
        let prepared = Prepared::new(&state.model.normalizer, &data).unwrap();
        let idx: Vec<usize> = (0..16).map(|i| (i * 3 + seed as usize) % 64).collect();
        let (x, y) = prepared.batch(&idx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let before = batch_loss(&state.model, state.loss, &x, &y, false, &mut rng).unwrap();
        let (_, grads) = group_gradients(&state.model, Group::Adversary, state.loss, &x, &y, false, &mut rng).unwrap();
        let mut opt = Optimizer::sgd(1e-6);
        opt.step(&mut state.model.params_mut(Group::Adversary), &grads, Direction::Maximize)
            .unwrap();
        let after = batch_loss(&state.model, state.loss, &x, &y, false, &mut rng).unwrap();
        assert!(after >= before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = percentile_data(5, 64, 2);
    for kind in [ModelKind::Span, ModelKind::Deepsets, ModelKind::PiSgd] {
        let model = model_for(kind, &data, 3);
        let cfg = TrainConfig {
            learner_lr: 0.0,
            adversary_lr: 0.0,
            outer_iters: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(model, &data, &cfg).unwrap();
        let before = state.model.clone();
        let history = train(&mut state, &data, &cfg, None).unwrap();
        assert!(!history.is_empty());
        assert_eq!(state.model.net, before.net, "{kind}");
    }
}

#[test]
fn phases_touch_only_their_own_parameters() {
    let data = percentile_data(5, 32, 4);
    let cfg = TrainConfig {
        learner_lr: 1e-2,
        adversary_lr: 1e-2,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(model_for(ModelKind::Span, &data, 5), &data, &cfg).unwrap();
    let prepared = Prepared::new(&state.model.normalizer, &data).unwrap();
    let (x, y) = prepared.batch(&(0..32).collect::<Vec<_>>()).unwrap();
    let snapshot = |s: &TrainState, g: Group| s.model.params(g).into_iter().cloned().collect::<Vec<Tensor>>();

    let (pn, learner) = (snapshot(&state, Group::Adversary), snapshot(&state, Group::Learner));
    state.update(Group::Learner, &x, &y, &cfg, 0).unwrap();
    assert_eq!(snapshot(&state, Group::Adversary), pn);
    assert_ne!(snapshot(&state, Group::Learner), learner);

    let (pn, learner) = (snapshot(&state, Group::Adversary), snapshot(&state, Group::Learner));
    state.update(Group::Adversary, &x, &y, &cfg, 0).unwrap();
    assert_eq!(snapshot(&state, Group::Learner), learner);
    assert_ne!(snapshot(&state, Group::Adversary), pn);
}

#[test]
fn zero_adversary_steps_freeze_the_permutation_network() {
    let data = percentile_data(5, 64, 6);
    let cfg = TrainConfig {
        adversary_steps: 0,
        learner_lr: 1e-3,
        outer_iters: 2,
        ..TrainConfig::default()
    };
    let model = model_for(ModelKind::Span, &data, 7);
    let pn = model.pn().unwrap().weight.clone();
    let (trained, history) = train_span(model, &data, &cfg).unwrap();
    assert_eq!(trained.pn().unwrap().weight, pn);
    assert!(history.iter().all(|r| r.phase == Phase::Learner));
    assert_eq!(history.len(), 4);
}

#[test]
fn history_layout_and_csv_round_trip() {
    let data = percentile_data(5, 70, 8);
    let cfg = TrainConfig {
        outer_iters: 2,
        adversary_steps: 2,
        ..TrainConfig::default()
    };
    let (_, history) = train_span(model_for(ModelKind::Span, &data, 9), &data, &cfg).unwrap();
    // 70 sets give two full batches of 32.
    let learner = history.iter().filter(|r| r.phase == Phase::Learner).count();
    let adversary = history.iter().filter(|r| r.phase == Phase::Adversary).count();
    assert_eq!((learner, adversary), (4, 8));
    assert_eq!(history[0].phase, Phase::Learner);
    assert_eq!(history[2].phase, Phase::Adversary);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    write_history(&path, &history).unwrap();
    assert_eq!(read_history(&path).unwrap(), history);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("outer_iter,phase,step,batch_loss\n"));
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let data = percentile_data(5, 64, 10);
    let cfg = TrainConfig {
        outer_iters: 2,
        learner_lr: 1e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let mut state = TrainState::new(model_for(ModelKind::Span, &data, 11), &data, &cfg).unwrap();
        train(&mut state, &data, &cfg, None).unwrap();
        save_checkpoint(&dir.path().join(run), &state.checkpoint(cfg.seed)).unwrap();
    }
    assert_eq!(files(&dir.path().join("a")), files(&dir.path().join("b")));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let data = percentile_data(5, 96, 12);
    for kind in [ModelKind::Span, ModelKind::Deepsets] {
        let cfg = TrainConfig {
            outer_iters: 4,
            learner_lr: 1e-3,
            adversary_lr: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut straight = TrainState::new(model_for(kind, &data, 13), &data, &cfg).unwrap();
        train(&mut straight, &data, &cfg, None).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let half = TrainConfig {
            outer_iters: 2,
            ..cfg.clone()
        };
        let mut first = TrainState::new(model_for(kind, &data, 13), &data, &half).unwrap();
        train(&mut first, &data, &half, None).unwrap();
        save_checkpoint(dir.path(), &first.checkpoint(cfg.seed)).unwrap();
        let mut resumed = TrainState::from_checkpoint(load_checkpoint(dir.path()).unwrap(), &cfg).unwrap();
        assert_eq!(resumed, first);
        train(&mut resumed, &data, &cfg, None).unwrap();
        assert_eq!(resumed.model, straight.model, "{kind}");
        assert_eq!(resumed, straight);
    }
}

#[test]
fn checkpoint_cadence_writes_snapshots() {
    let data = percentile_data(5, 64, 14);
    let cfg = TrainConfig {
        outer_iters: 4,
        checkpoint_every: 2,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::new(model_for(ModelKind::Deepsets, &data, 1), &data, &cfg).unwrap();
    train(&mut state, &data, &cfg, Some(dir.path())).unwrap();
    let names: Vec<String> = files_in(dir.path());
    assert_eq!(names, vec!["outer-0002", "outer-0004"]);
    let last = TrainState::from_checkpoint(load_checkpoint(&dir.path().join("outer-0004")).unwrap(), &cfg).unwrap();
    assert_eq!(last, state);
}

fn files_in(dir: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let mut data = percentile_data(5, 64, 15);
    for inst in &mut data.instances {
        inst.label.data_mut()[0] = f64::NAN;
    }
    let cfg = TrainConfig::default();
    let err = train_standard(model_for(ModelKind::Deepsets, &data, 1), &data, &cfg).unwrap_err();
    match err {
        spanlab::Error::Divergence {
            outer_iter,
            phase,
            batch,
            loss,
        } => {
            assert_eq!((outer_iter, phase, batch), (0, "learner", 0));
            assert!(loss.is_nan());
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn wrong_trainer_or_dims_is_rejected() {
    let data = percentile_data(5, 64, 16);
    let cfg = TrainConfig::default();
    assert!(train_span(model_for(ModelKind::Deepsets, &data, 1), &data, &cfg).is_err());
    assert!(train_standard(model_for(ModelKind::Span, &data, 1), &data, &cfg).is_err());
    let other = percentile_data(6, 64, 16);
    assert!(train_standard(model_for(ModelKind::Deepsets, &other, 1), &data, &cfg).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(train_standard(model_for(ModelKind::Deepsets, &data, 1), &data, &bad).is_err());
}

#[test]
fn deepsets_learns_the_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 10;
    let instances: Vec<SetInstance> = (0..640)
        .map(|_| {
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let label = Tensor::vector(vec![values.iter().sum()]);
            SetInstance {
                set: Tensor::new(vec![n, 1], values).unwrap(),
                label,
                digits: None,
            }
        })
        .collect();
    let data = Dataset {
        header: DatasetHeader::new(TaskKind::Kary, n, 1, 1, 0, instances.len()),
        instances,
    };
    let cfg = TrainConfig {
        learner_lr: 1e-3,
        outer_iters: 100,
        loss: Some(LossKind::Mse),
        ..TrainConfig::default()
    };
    let model = Model::new(
        ModelConfig {
            width: 32,
            ..ModelConfig::of_kind(ModelKind::Deepsets)
        },
        Dims {
            set_size: n,
            input_dim: 1,
            output_dim: 1,
        },
        0,
    )
    .unwrap();
    let (model, history) = train_standard(model, &data, &cfg).unwrap();
    assert_eq!(history.len(), 2000);
    let x = spanlab::tasks::stacked_sets(&data).unwrap();
    let pred = model.predict(&x, &mut rng).unwrap();
    let err: f64 = data
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| ((pred.data()[i] - inst.label.data()[0]) / inst.label.data()[0]).abs())
        .sum::<f64>()
        / data.len() as f64;
    assert!(err < 0.02, "relative error {err}");
}

#[test]
fn default_configs_give_finite_losses_on_every_task() {
    for task in [TaskKind::Kary, TaskKind::Percentile, TaskKind::Maxflow, TaskKind::Spiked, TaskKind::Maxdigit] {
        let data = TaskConfig {
            kind: task,
            n: 4,
            d: 3,
            count: 40,
            vertices: 12,
            edges: 30,
            ..TaskConfig::default()
        }
        .generate()
        .unwrap();
        for kind in ModelKind::ALL {
            let cfg = TrainConfig {
                outer_iters: 1,
                batch_size: 8,
                ..TrainConfig::default()
            };
            let model = model_for(kind, &data, 0);
            let mut state = TrainState::new(model, &data, &cfg).unwrap();
            let history = train(&mut state, &data, &cfg, None).unwrap();
            assert!(history.iter().all(|r| r.batch_loss.is_finite()), "{task} {kind}");
        }
    }
}
