use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Dataset, DatasetHeader, SetInstance, TaskKind};
use crate::error::{Error, Result};
use crate::models::combinations;
use crate::seed::rng_for;
use crate::Tensor;

/// Variance of every mixture component along each coordinate.
pub const MIXTURE_VARIANCE: f64 = 10.0;

fn check_arity(n: usize, k: usize) -> Result<()> {
    if !(k == 2 || k == 3) {
        return Err(Error::invalid(format!("k-ary distance needs k in {{2, 3}}, got {k}")));
    }
    if n < k {
        return Err(Error::invalid(format!("k-ary distance needs n >= k, got n = {n}, k = {k}")));
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest total pairwise Euclidean distance over all `k`-element subsets.
/// Each subset's distances are summed in ascending order, so row order
/// cannot change the result.
pub fn oracle_kary(x: &Tensor, k: usize) -> Result<f64> {
    check_arity(x.rows(), k)?;
    let mut best = f64::NEG_INFINITY;
    for subset in combinations(x.rows(), k) {
        let mut pair: Vec<f64> = Vec::with_capacity(k * (k - 1) / 2);
        for (a, &i) in subset.iter().enumerate() {
            for &j in &subset[a + 1..] {
                pair.push(distance(x.row(i), x.row(j)));
            }
        }
        pair.sort_by(f64::total_cmp);
        best = best.max(pair.iter().sum());
    }
    Ok(best)
}

/// Sets drawn from an equal-weight mixture of `k` Gaussians with centres
/// uniform on `[1, n]^d` and covariance `10 I`.
pub fn gen_kary_distance(n: usize, d: usize, k: usize, count: usize, seed: u64) -> Result<Dataset> {
    check_arity(n, k)?;
    if d == 0 {
        return Err(Error::invalid("k-ary distance needs d >= 1"));
    }
    let sd = MIXTURE_VARIANCE.sqrt();
    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng_for(seed, "kary", i as u64);
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(1.0..=n as f64)).collect())
            .collect();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let c = &centers[rng.random_range(0..k)];
            for &mu in c {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mu + sd * z);
            }
        }
        let set = Tensor::new(vec![n, d], data)?;
        let label = Tensor::vector(vec![oracle_kary(&set, k)?]);
        instances.push(SetInstance {
            set,
            label,
            digits: None,
        });
    }
    let mut header = DatasetHeader::new(TaskKind::Kary, n, d, 1, seed, count);
    header.k = Some(k);
    Ok(Dataset { header, instances })
}
