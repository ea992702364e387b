//! Metrics, the permutation-invariance statistic and result tables.

mod report;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

pub use report::{aggregate, read_results, write_plot_data, write_results, MetricRow};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::seed::rng_for;
use crate::tasks::{Dataset, TaskKind};
use crate::train::{loss_eval, LossKind};
use crate::Tensor;

/// Labels at or below this magnitude have no relative error.
pub const RELATIVE_ERROR_EPS: f64 = 1e-9;
/// Means at or below this magnitude make the invariance ratio fall back to
/// the absolute standard deviation.
pub const DELTA_MEAN_EPS: f64 = 1e-12;
/// Sets per prediction chunk; chunks are the unit of parallel work.
pub const EVAL_CHUNK: usize = 64;

pub fn relative_error(y: f64, y_hat: f64) -> Result<f64> {
    if !(y.abs() > RELATIVE_ERROR_EPS) {
        return Err(Error::Domain {
            op: "relative_error",
            detail: format!("label {y} too close to zero"),
        });
    }
    Ok((y - y_hat).abs() / y.abs())
}

/// `|v . v_hat| / (|v| |v_hat|)`.
pub fn cosine_metric(v: &[f64], v_hat: &[f64]) -> Result<f64> {
    if v.len() != v_hat.len() {
        return Err(Error::shape("cosine_metric", &[v.len()], &[v_hat.len()]));
    }
    let dot: f64 = v.iter().zip(v_hat).map(|(a, b)| a * b).sum();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nh = v_hat.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nv == 0.0 || nh == 0.0 {
        return Err(Error::Domain {
            op: "cosine_metric",
            detail: "zero vector".into(),
        });
    }
    Ok((dot.abs() / (nv * nh)).min(1.0))
}

/// Worker threads for evaluation: `SPANLAB_THREADS` when set, else all cores.
pub fn eval_threads() -> usize {
    std::env::var("SPANLAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

/// Predictions `[count, L]` for every set of `data`. Chunk `c` draws its
/// randomness from `(seed, c)`, so results do not depend on the thread count.
pub fn predictions(model: &Model, data: &Dataset, seed: u64) -> Result<Tensor> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(EVAL_CHUNK).collect();
    let run = || {
        chunks
            .par_iter()
            .enumerate()
            .map(|(c, chunk)| {
                let mut rng = rng_for(seed, "eval-chunk", c as u64);
                model.predict(&data.sets(chunk)?, &mut rng)
            })
            .collect::<Result<Vec<Tensor>>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eval_threads())
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let parts = pool.install(run)?;
    let l = model.dims.output_dim;
    let data_out: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(vec![data.len(), l], data_out)
}

fn row(pred: &Tensor, i: usize) -> &[f64] {
    let l = pred.cols();
    &pred.data()[i * l..(i + 1) * l]
}

/// Average relative error of scalar predictions.
pub fn mean_relative_error(pred: &Tensor, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (i, inst) in data.instances.iter().enumerate() {
        total += relative_error(inst.label.data()[0], row(pred, i)[0])?;
    }
    Ok(total / data.len() as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Task metrics of `model` on `data`: the mean loss plus relative error
/// (scalar tasks), absolute cosine (spiked) or accuracy (max digit).
pub fn evaluate(model: &Model, data: &Dataset, loss: LossKind, seed: u64) -> Result<Vec<(String, f64)>> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation on an empty dataset"));
    }
    let pred = predictions(model, data, seed)?;
    let count = data.len() as f64;
    let mut loss_total = 0.0;
    for (i, inst) in data.instances.iter().enumerate() {
        let p = model.normalizer.labels(&Tensor::vector(row(&pred, i).to_vec()));
        loss_total += loss_eval(loss, &p, &model.normalizer.labels(&inst.label))?;
    }
    let mut out = vec![("loss".to_string(), loss_total / count)];
    match data.header.task {
        TaskKind::Kary | TaskKind::Percentile | TaskKind::Maxflow => {
            out.push(("relative_error".into(), mean_relative_error(&pred, data)?));
        }
        TaskKind::Spiked => {
            let mut total = 0.0;
            for (i, inst) in data.instances.iter().enumerate() {
                total += cosine_metric(inst.label.data(), row(&pred, i))?;
            }
            out.push(("abs_cosine".into(), total / count));
        }
        TaskKind::Maxdigit => {
            let hits = data
                .instances
                .iter()
                .enumerate()
                .filter(|(i, inst)| argmax(row(&pred, *i)) == argmax(inst.label.data()))
                .count();
            out.push(("accuracy".into(), hits as f64 / count));
        }
    }
    Ok(out)
}

/// Spread of a model's predictions across random reorderings of one set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvarianceDelta {
    /// Largest per-coordinate `std / |mean|`, or the absolute std for
    /// coordinates whose mean is within [`DELTA_MEAN_EPS`] of zero.
    pub ratio: f64,
    /// Largest per-coordinate standard deviation.
    pub max_component_std: f64,
    /// Some coordinate used the absolute fallback.
    pub absolute: bool,
}

/// Predicts `set` under `num_perms` uniformly random row permutations and
/// measures the spread (population standard deviation) per coordinate.
pub fn invariance_delta(model: &Model, set: &Tensor, num_perms: usize, rng: &mut impl Rng) -> Result<InvarianceDelta> {
    if num_perms < 2 {
        return Err(Error::invalid("invariance statistic needs at least two permutations"));
    }
    let (n, d) = (set.rows(), set.cols());
    let mut data = Vec::with_capacity(num_perms * n * d);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..num_perms {
        order.shuffle(rng);
        for &i in &order {
            data.extend_from_slice(set.row(i));
        }
    }
    let pred = model.predict(&Tensor::new(vec![num_perms, n, d], data)?, rng)?;
    let l = pred.cols();
    let mut out = InvarianceDelta {
        ratio: 0.0,
        max_component_std: 0.0,
        absolute: false,
    };
    for c in 0..l {
        let col: Vec<f64> = (0..num_perms).map(|p| pred.data()[p * l + c]).collect();
        let mean = col.iter().sum::<f64>() / num_perms as f64;
        let std = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / num_perms as f64).sqrt();
        let value = if mean.abs() <= DELTA_MEAN_EPS {
            out.absolute = true;
            std
        } else {
            std / mean.abs()
        };
        out.ratio = out.ratio.max(value);
        out.max_component_std = out.max_component_std.max(std);
    }
    Ok(out)
}

/// Shares of max-digit predictions that name the set's maximum digit, the
/// last element's digit, or something else. A prediction matching both the
/// maximum and the last element counts as the maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationFractions {
    pub max: f64,
    pub last: f64,
    pub other: f64,
}

pub fn ablation_fractions(model: &Model, data: &Dataset, seed: u64) -> Result<AblationFractions> {
    if data.header.task != TaskKind::Maxdigit || data.is_empty() {
        return Err(Error::invalid("ablation fractions need a non-empty max-digit dataset"));
    }
    let pred = predictions(model, data, seed)?;
    let digits: Vec<&Vec<u8>> = data
        .instances
        .iter()
        .map(|i| i.digits.as_ref().ok_or_else(|| Error::Format("max-digit instance without digits".into())))
        .collect::<Result<_>>()?;
    Ok(classify_predictions(&pred, &digits))
}

/// Buckets class predictions `[count, 10]` against per-set digit lists.
pub fn classify_predictions(pred: &Tensor, digits: &[&Vec<u8>]) -> AblationFractions {
    let (mut max, mut last) = (0usize, 0usize);
    for (i, ds) in digits.iter().enumerate() {
        let guess = argmax(row(pred, i));
        if Some(guess) == ds.iter().max().map(|&m| m as usize) {
            max += 1;
        } else if Some(guess) == ds.last().map(|&m| m as usize) {
            last += 1;
        }
    }
    let count = digits.len() as f64;
    let other = digits.len() - max - last;
    AblationFractions {
        max: max as f64 / count,
        last: last as f64 / count,
        other: other as f64 / count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_values() {
        assert_eq!(relative_error(2.0, 1.0).unwrap(), 0.5);
        assert_eq!(relative_error(3.0, 3.0).unwrap(), 0.0);
        assert!(relative_error(1e-10, 1.0).is_err());
    }

    #[test]
    fn cosine_values() {
        assert!((cosine_metric(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_metric(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cosine_metric(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn tie_between_max_and_last_counts_as_max() {
        let pred = Tensor::matrix(2, 10, {
            let mut v = vec![0.0; 20];
            v[9] = 1.0;
            v[10 + 2] = 1.0;
            v
        })
        .unwrap();
        let a = vec![1, 4, 9];
        let b = vec![7, 5, 2];
        let f = classify_predictions(&pred, &[&a, &b]);
        assert_eq!((f.max, f.last, f.other), (0.5, 0.5, 0.0));
    }
}
