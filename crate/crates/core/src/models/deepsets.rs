use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fc::{BoundFcStack, FcStack};
use crate::error::{Error, Result};
use crate::nn::Binder;
use crate::{Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Sum,
    Max,
}

/// `rho(pool_i phi(x_i))`. Sum pooling adds in value-sorted order, so the
/// output is bit-identical under any reordering of the set.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepSetsModel {
    pub phi: FcStack,
    pub pooling: Pooling,
    pub rho: FcStack,
}

pub struct BoundDeepSets<'t> {
    phi: BoundFcStack<'t>,
    pooling: Pooling,
    rho: BoundFcStack<'t>,
    dropout: f64,
}

impl DeepSetsModel {
    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.phi.params();
        p.extend(self.rho.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.phi.params_mut();
        p.extend(self.rho.params_mut());
        p
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.phi.named_params("phi");
        p.extend(self.rho.named_params("rho"));
        p
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t, f64>, dropout: f64) -> BoundDeepSets<'t> {
        BoundDeepSets {
            phi: self.phi.bind(b),
            pooling: self.pooling,
            rho: self.rho.bind(b),
            dropout,
        }
    }
}

impl<'t> BoundDeepSets<'t> {
    /// `[batch, n, d] -> [batch, L]`.
    pub fn forward(&self, x: &Var<'t>, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        let shape = x.shape();
        let &[batch, n, d] = shape.as_slice() else {
            return Err(Error::shape("deepsets_forward", &shape, &[]));
        };
        let rows = x.reshape(&[batch * n, d])?;
        let emb = self.phi.forward(&rows, self.dropout, training, rng)?;
        let width = emb.shape()[1];
        let emb = emb.reshape(&[batch, n, width])?;
        let pooled = match self.pooling {
            Pooling::Sum => emb.sum_canonical(1)?,
            Pooling::Max => emb.max(1)?,
        };
        self.rho.forward(&pooled, self.dropout, training, rng)
    }
}

/// Number of `k`-element subsets of `n` items.
pub fn combination_count(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u64;
    let n = n as u64;
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// All `k`-element index subsets of `0..n`, each ascending, in
/// lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn row_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Selection matrices `[batch, n, C(n,k) * k]` such that `contract_rows`
/// with them lists every `k`-subset of each set. Inside a tuple the elements
/// appear in lexicographic order of their coordinates, so the multiset of
/// tuple vectors depends only on the multiset of elements.
pub fn tuple_selectors(x: &Tensor, k: usize) -> Result<Tensor> {
    let &[batch, n, d] = x.shape() else {
        return Err(Error::shape("janossy_forward", x.shape(), &[]));
    };
    if k == 0 || n < k {
        return Err(Error::invalid(format!("janossy arity {k} needs 1 <= k <= n = {n}")));
    }
    let combos = combinations(n, k);
    let cols = combos.len() * k;
    let mut data = vec![0.0; batch * n * cols];
    for b in 0..batch {
        let set = &x.data()[b * n * d..(b + 1) * n * d];
        let row = |i: usize| &set[i * d..(i + 1) * d];
        for (t, combo) in combos.iter().enumerate() {
            let mut members = combo.clone();
            members.sort_by(|&i, &j| row_cmp(row(i), row(j)));
            for (slot, &src) in members.iter().enumerate() {
                data[b * n * cols + src * cols + t * k + slot] = 1.0;
            }
        }
    }
    Tensor::new(vec![batch, n, cols], data)
}

/// k-ary Janossy pooling: DeepSets over all `k`-element tuples of the set,
/// each tuple flattened to `k * d` features.
#[derive(Clone, Debug, PartialEq)]
pub struct JanossyModel {
    pub arity: usize,
    pub inner: DeepSetsModel,
}

pub struct BoundJanossy<'t> {
    arity: usize,
    inner: BoundDeepSets<'t>,
}

impl JanossyModel {
    pub fn bind<'t>(&self, b: &mut Binder<'t, f64>, dropout: f64) -> BoundJanossy<'t> {
        BoundJanossy {
            arity: self.arity,
            inner: self.inner.bind(b, dropout),
        }
    }
}

impl<'t> BoundJanossy<'t> {
    pub fn forward(&self, x: &Var<'t>, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        let shape = x.shape();
        let &[batch, _, d] = shape.as_slice() else {
            return Err(Error::shape("janossy_forward", &shape, &[]));
        };
        let selectors = tuple_selectors(&x.value_ref(), self.arity)?;
        let count = selectors.shape()[2] / self.arity;
        let tuples = x
            .tape()
            .constant(selectors)
            .contract_rows(x)?
            .reshape(&[batch, count, self.arity * d])?;
        self.inner.forward(&tuples, training, rng)
    }
}
