use spanlab::experiment::{make_splits, cmd_gen, cmd_oracle_verify, cmd_sweep, ExperimentConfig};
use spanlab::models::{ModelKind, Dims};
use spanlab::tasks::TaskKind;

#[test]
fn config_round_trip_is_identity() {
    let text = r#"
output = "runs/x"

[task]
kind = "maxflow"
vertices = 30
edges = 80
n = 5
count = 40
seed = 9

[model]
kind = "span-fc"
hidden = 16
dropout = 0.2

[train]
learner_lr = 3e-4
weight_decay = 0.01
loss = "mse"

[sweep]
widths = [8, 16]
models = ["span", "deepsets"]
seeds = [1, 2]
"#;
    let a = ExperimentConfig::from_toml(text).unwrap();
    let b = ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.model.kind, ModelKind::SpanFc);
    assert_eq!(a.sweep.dropouts, vec![0.5, 0.2, 0.0]);
    let c = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
}

#[test]
fn unknown_keys_are_errors() {
    for text in ["bogus = 1", "[task]\nsize = 3", "[model]\nkind = \"span\"\nlayers = 2", "[train]\nlr = 0.1", "[nope]"] {
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert_eq!(err.kind(), "config", "{text}");
    }
    assert!(ExperimentConfig::from_toml("[model]\nkind = \"transformer\"").is_err());
}

#[test]
fn dims_follow_task() {
    let mut cfg = ExperimentConfig::default();
    let cases = [
        (TaskKind::Kary, (20, 2, 1)),
        (TaskKind::Percentile, (20, 1, 1)),
        (TaskKind::Maxflow, (20, 164, 1)),
        (TaskKind::Spiked, (20, 2, 2)),
        (TaskKind::Maxdigit, (20, 35, 10)),
    ];
    for (kind, (n, d, l)) in cases {
        cfg.task.kind = kind;
        assert_eq!(cfg.dims(), Dims { set_size: n, input_dim: d, output_dim: l }, "{kind}");
    }
}

#[test]
fn dims_match_generated_data() {
    for kind in [TaskKind::Kary, TaskKind::Percentile, TaskKind::Maxflow, TaskKind::Spiked, TaskKind::Maxdigit] {
        let mut cfg = ExperimentConfig::default();
        cfg.task.kind = kind;
        cfg.task.n = 4;
        cfg.task.count = 10;
        cfg.task.vertices = 12;
        cfg.task.edges = 30;
        cfg.train.loss = None;
        let s = make_splits(&cfg.task).unwrap();
        let dims = cfg.dims();
        let inst = &s.train.instances[0];
        assert_eq!(inst.set.shape(), &[dims.set_size, dims.input_dim], "{kind}");
        assert_eq!(inst.label.shape(), &[dims.output_dim], "{kind}");
    }
}

#[test]
fn incompatible_settings_fail_validation() {
    let mut cfg = ExperimentConfig::default();
    cfg.task.kind = TaskKind::Percentile;
    cfg.train.loss = Some(spanlab::train::LossKind::CrossEntropy);
    assert!(cfg.validate().is_err());

    let mut cfg = ExperimentConfig::default();
    cfg.task.n = 3;
    cfg.model.kind = ModelKind::Janossy;
    cfg.model.arity = 4;
    assert!(cfg.validate().is_err());

    let mut cfg = ExperimentConfig::default();
    cfg.sweep.models = vec![ModelKind::Janossy];
    cfg.task.n = 1;
    assert!(cfg.validate().is_err());

    assert!(ExperimentConfig::default().validate().is_ok());
}

#[test]
fn split_sizes() {
    let mut cfg = ExperimentConfig::default();
    cfg.task.count = 100;
    let s = make_splits(&cfg.task).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
    cfg.task.test_count = Some(30);
    let s = make_splits(&cfg.task).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (90, 10, 30));
    assert_eq!(make_splits(&cfg.task).unwrap(), s);
}

#[test]
fn gen_writes_verifiable_files_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.task.kind = TaskKind::Kary;
    cfg.task.n = 5;
    cfg.task.count = 20;
    cmd_gen(&cfg, tmp.path()).unwrap();
    let checked = cmd_oracle_verify(tmp.path()).unwrap();
    assert_eq!(checked.len(), 3);
    assert!(checked.iter().all(|(_, v)| v.passed()));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("manifest-gen.json")).unwrap()).unwrap();
    let back: ExperimentConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn sweep_reports_winners_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.task.kind = TaskKind::Percentile;
    cfg.task.n = 6;
    cfg.task.count = 80;
    cfg.model.kind = ModelKind::Deepsets;
    cfg.train.outer_iters = 2;
    cfg.train.batch_size = 16;
    cfg.eval.invariance_sets = 3;
    cfg.sweep.widths = vec![4, 8];
    cfg.sweep.dropouts = vec![0.0];
    cfg.sweep.weight_decays = vec![0.0, 0.1];
    cfg.sweep.seeds = vec![1, 2];
    let rows = cmd_sweep(&cfg, tmp.path()).unwrap();
    let mut grid = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let points: Vec<(String, u64, f64)> = grid
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap(), r[5].parse().unwrap())
        })
        .collect();
    assert_eq!(points.len(), 8);
    // Per-run rows for both seeds plus aggregated rows with a spread.
    assert!(rows.iter().any(|r| r.seed == 2 && r.std == 0.0));
    assert!(rows.iter().filter(|r| r.metric == "relative_error").count() == 3);
    let plot = std::fs::read_to_string(tmp.path().join("plot-relative_error.dat")).unwrap();
    assert!(plot.starts_with("# width deepsets\n"));
    assert_eq!(plot.lines().count(), 3);
    let again = cmd_sweep(&cfg, &tmp.path().join("again")).unwrap();
    assert_eq!(again, rows);
}
