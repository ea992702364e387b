use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spanlab::experiment::{self, ExperimentConfig, GRADCHECK_TOLERANCE};
use spanlab::{Error, Result};

#[derive(Clone, Copy, Debug, Subcommand)]
enum Command {
    /// Generate train/val/test datasets.
    Gen,
    /// Train a model, or resume from --checkpoint.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval,
    /// Recompute every label of a dataset file or directory with its oracle.
    OracleVerify,
    /// Compare analytic and finite-difference gradients of the configured model.
    Gradcheck,
    /// Train a hyperparameter grid and report the best point per model.
    Sweep,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `<output>/<command>` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint to resume (train) or evaluate (eval).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Overrides the task, train and eval seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset file or directory for oracle-verify.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Parser)]
#[command(name = "spanlab", version, about = "Permutation-adversarial set function learning")]
struct Args {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.task.seed = seed;
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
        cfg.sweep.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.output.join(name))
}

fn print_rows(rows: &[spanlab::eval::MetricRow]) {
    for r in rows {
        println!("{}\t{}\t{}\t{}", r.model, r.metric, r.value, r.std);
    }
}

fn run(command: Command, common: &Common) -> Result<()> {
    match command {
        Command::Gen => {
            let cfg = load_config(common)?;
            let out = out_dir(common, &cfg, "data");
            let splits = experiment::cmd_gen(&cfg, &out)?;
            println!(
                "wrote {} train, {} val, {} test sets to {}",
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                out.display()
            );
        }
        Command::Train => {
            let cfg = load_config(common)?;
            let out = out_dir(common, &cfg, "train");
            let state = experiment::cmd_train(&cfg, &out, common.checkpoint.as_deref())?;
            println!("outer_iter {} step {} -> {}", state.outer_iter, state.step, out.display());
        }
        Command::Eval => {
            let cfg = load_config(common)?;
            let ckpt = common
                .checkpoint
                .clone()
                .unwrap_or_else(|| experiment::default_checkpoint(&cfg, &cfg.output.join("train")));
            let rows = experiment::cmd_eval(&cfg, &ckpt, &out_dir(common, &cfg, "eval"))?;
            print_rows(&rows);
        }
        Command::OracleVerify => {
            let path = match &common.data {
                Some(p) => p.clone(),
                None => out_dir(common, &load_config(common)?, "data"),
            };
            let mut failed = Vec::new();
            for (file, v) in experiment::cmd_oracle_verify(&path)? {
                let status = if v.passed() { "pass" } else { "FAIL" };
                println!("{status}\t{}\t{} checked\t{} mismatches", file.display(), v.checked, v.mismatches.len());
                if !v.passed() {
                    failed.push(file);
                }
            }
            if !failed.is_empty() {
                return Err(Error::Format(format!("{} dataset(s) failed oracle verification", failed.len())));
            }
        }
        Command::Gradcheck => {
            let cfg = load_config(common)?;
            let err = experiment::cmd_gradcheck(&cfg)?;
            println!("max_rel_error\t{err:e}");
            if !(err <= GRADCHECK_TOLERANCE) {
                return Err(Error::Gradient(format!("max relative error {err:e} above {GRADCHECK_TOLERANCE:e}")));
            }
        }
        Command::Sweep => {
            let cfg = load_config(common)?;
            let rows = experiment::cmd_sweep(&cfg, &out_dir(common, &cfg, "sweep"))?;
            print_rows(&rows);
        }
    }
    Ok(())
}

fn error_line(e: &Error) -> String {
    let msg = serde_json::to_string(&e.to_string()).unwrap_or_else(|_| "\"?\"".into());
    format!("error kind={} message={msg}", e.kind())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let msg = serde_json::to_string(&first).unwrap_or_else(|_| "\"?\"".into());
            eprintln!("error kind=usage message={msg}");
            return ExitCode::from(2);
        }
    };
    match run(args.command, &args.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
