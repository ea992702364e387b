use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Dataset, DatasetHeader, SetInstance, TaskKind};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::Tensor;

pub const POWER_ITERATIONS: usize = 1000;
pub const POWER_TOLERANCE: f64 = 1e-10;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Flips `v` so its first nonzero coordinate is positive.
pub fn sign_canonical(v: &mut [f64]) {
    if v.iter().find(|&&x| x != 0.0).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn unit_vector(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Top eigenvector of a symmetric matrix by power iteration, started from
/// its largest-norm column. Stops after [`POWER_ITERATIONS`] steps or when
/// the relative change falls below [`POWER_TOLERANCE`].
pub fn power_iteration(m: &Tensor) -> Result<Vec<f64>> {
    let d = m.rows();
    if m.rank() != 2 || m.cols() != d || d == 0 {
        return Err(Error::shape("power_iteration", m.shape(), &[]));
    }
    let column = |j: usize| (0..d).map(|i| m.at(i, j)).collect::<Vec<f64>>();
    let start = (0..d)
        .max_by(|&a, &b| norm(&column(a)).total_cmp(&norm(&column(b))))
        .expect("d > 0");
    let mut v = column(start);
    let n0 = norm(&v);
    if n0 == 0.0 {
        return Err(Error::invalid("power iteration on the zero matrix"));
    }
    v.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..POWER_ITERATIONS {
        let mut w: Vec<f64> = (0..d).map(|i| m.row(i).iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let nw = norm(&w);
        if nw == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        if w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let change = norm(&w.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        v = w;
        if change < POWER_TOLERANCE {
            break;
        }
    }
    sign_canonical(&mut v);
    Ok(v)
}

/// Sign-canonical top eigenvector of `Σᵢ xᵢ xᵢᵀ`.
pub fn oracle_top_eigvec(x: &Tensor) -> Result<Vec<f64>> {
    power_iteration(&x.transpose()?.matmul(x)?)
}

/// Instance `i` of the spiked dataset with the given seed; independent of
/// the dataset size.
pub fn spiked_instance(n: usize, d: usize, sigma: f64, seed: u64, i: usize) -> Result<SetInstance> {
    let mut rng = rng_for(seed, "spiked", i as u64);
    let mut v = unit_vector(d, &mut rng);
    sign_canonical(&mut v);
    let set = loop {
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            for &vi in &v {
                let e: f64 = StandardNormal.sample(&mut rng);
                data.push(z * vi + sigma * e);
            }
        }
        if data.iter().any(|&x| x != 0.0) {
            break Tensor::new(vec![n, d], data)?;
        }
    };
    Ok(SetInstance {
        set,
        label: Tensor::vector(v),
        digits: None,
    })
}

/// Sets of `n` samples from `N(0, v vᵀ + σ² I)` with `v` uniform on the unit
/// sphere; the label is `v`, sign-canonical.
pub fn gen_spiked(n: usize, d: usize, sigma: f64, count: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d < 2 || !(sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "spiked model needs n > 1, d >= 2, sigma >= 0 (got n = {n}, d = {d}, sigma = {sigma})"
        )));
    }
    let instances = (0..count).map(|i| spiked_instance(n, d, sigma, seed, i)).collect::<Result<Vec<_>>>()?;
    let mut header = DatasetHeader::new(TaskKind::Spiked, n, d, d, seed, count);
    header.sigma = Some(sigma);
    Ok(Dataset { header, instances })
}
