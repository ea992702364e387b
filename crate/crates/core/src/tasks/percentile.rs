use rand::Rng;

use super::dataset::{Dataset, DatasetHeader, SetInstance, TaskKind};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::Tensor;

fn check_rank(r: f64) -> Result<()> {
    if !(r > 0.0 && r <= 100.0) {
        return Err(Error::invalid(format!("percentile rank must lie in (0, 100], got {r}")));
    }
    Ok(())
}

/// 1-based nearest-rank index `ceil(r * n / 100)`.
pub fn nearest_rank(n: usize, r: f64) -> usize {
    ((r * n as f64 / 100.0).ceil() as usize).clamp(1, n)
}

/// Nearest-rank `r`-th percentile of a one-column set.
pub fn oracle_percentile(x: &Tensor, r: f64) -> Result<f64> {
    check_rank(r)?;
    if x.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    let mut v = x.data().to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[nearest_rank(v.len(), r) - 1])
}

/// Sets of `n` integers drawn uniformly with replacement from
/// `[1, value_max]`.
pub fn gen_percentile(n: usize, r: f64, value_max: u32, count: usize, seed: u64) -> Result<Dataset> {
    check_rank(r)?;
    if n == 0 || value_max == 0 {
        return Err(Error::invalid("percentile sets need n >= 1 and value_max >= 1"));
    }
    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng_for(seed, "percentile", i as u64);
        let values = (0..n).map(|_| f64::from(rng.random_range(1..=value_max))).collect();
        let set = Tensor::new(vec![n, 1], values)?;
        let label = Tensor::vector(vec![oracle_percentile(&set, r)?]);
        instances.push(SetInstance {
            set,
            label,
            digits: None,
        });
    }
    let mut header = DatasetHeader::new(TaskKind::Percentile, n, 1, 1, seed, count);
    header.r = Some(r);
    header.value_max = Some(value_max);
    Ok(Dataset { header, instances })
}
