use std::path::Path;
use std::process::{Command, Output};

fn spanlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanlab"))
        .args(args)
        .env("SPANLAB_THREADS", "1")
        .output()
        .expect("spawn spanlab")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, format!("output = \"{}\"\n{body}", dir.join("run").display())).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"
[task]
kind = "percentile"
n = 8
count = 120
seed = 3

[model]
kind = "deepsets"
hidden = 8
width = 8

[train]
outer_iters = 2
batch_size = 16
learner_lr = 1e-3
seed = 7

[eval]
invariance_sets = 5
"#;

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn gen_verify_train_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = tmp.path().join("run");

    let out = spanlab(&["gen", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "manifest-gen.json"] {
        assert!(run.join("data").join(name).exists(), "{name}");
    }

    let out = spanlab(&["oracle-verify", "--data", run.join("data").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("pass")).count(), 3, "{text}");

    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = spanlab(&["train", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read_dir_bytes(&a.join("checkpoint")), read_dir_bytes(&b.join("checkpoint")));
    assert_eq!(std::fs::read(a.join("history.csv")).unwrap(), std::fs::read(b.join("history.csv")).unwrap());

    let mut results = Vec::new();
    for name in ["e1", "e2"] {
        let dir = tmp.path().join(name);
        let ckpt = a.join("checkpoint");
        let out = spanlab(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        results.push(std::fs::read(dir.join("results.csv")).unwrap());
    }
    assert_eq!(results[0], results[1]);
    let csv = String::from_utf8(results[0].clone()).unwrap();
    assert!(csv.starts_with("task,model,seed,n,d,metric,value,std\n"));
    assert!(csv.contains(",relative_error,"));
    assert!(csv.contains(",delta_within_1e-2,"));
}

#[test]
fn unknown_key_is_one_line_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[task]\nkind = \"percentile\"\nbogus = 1\n");
    let out = spanlab(&["gen", "--config", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=config message=\""), "{err}");
    assert!(err.contains("bogus"));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn incompatible_model_rejected_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[task]\nkind = \"percentile\"\nn = 4\n[model]\nkind = \"janossy\"\narity = 5\n");
    let out = spanlab(&["train", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind=config"));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn usage_errors_are_one_line() {
    let out = spanlab(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error kind=usage"));
}

#[test]
fn gradcheck_small_span() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[task]\nkind = \"kary\"\nn = 6\nd = 3\n[model]\nkind = \"span\"\nhidden = 8\nwidth = 8\ntemperature = 1.0\nsinkhorn_iterations = 20\n",
    );
    let out = spanlab(&["gradcheck", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8_lossy(&out.stdout);
    let value: f64 = line.trim().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(value <= 1e-4, "{value}");
}
