//! Value-level kernels shared by the forward and backward passes.

use std::cmp::Ordering;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub(crate) fn zip<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    b: &Tensor<S>,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// In-place `acc += src` for equal shapes.
pub(crate) fn accumulate<S: Scalar>(acc: &mut Tensor<S>, src: &Tensor<S>) {
    debug_assert_eq!(acc.shape(), src.shape());
    for (a, &s) in acc.data_mut().iter_mut().zip(src.data()) {
        *a = *a + s;
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) strides.
pub(crate) fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(op, shape, &[axis]));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn removed_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

/// Batch count and matrix dims for rank-2 or rank-3 operands.
fn mat_dims(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((1, r, c)),
        [b, r, c] => Ok((b, r, c)),
        _ => Err(Error::shape(op, t.shape(), &[])),
    }
}

fn mat_shape(rank: usize, batch: usize, rows: usize, cols: usize) -> Vec<usize> {
    if rank == 2 {
        vec![rows, cols]
    } else {
        vec![batch, rows, cols]
    }
}

/// `a · b` for matrices, or batched over a leading axis for rank-3 operands.
pub(crate) fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (ba, m, k) = mat_dims("matmul", a)?;
    let (bb, k2, n) = mat_dims("matmul", b)?;
    if a.rank() != b.rank() || ba != bb || k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![S::zero(); ba * m * n];
    let (ad, bd) = (a.data(), b.data());
    for batch in 0..ba {
        let ao = &ad[batch * m * k..(batch + 1) * m * k];
        let bo = &bd[batch * k * n..(batch + 1) * k * n];
        let oo = &mut out[batch * m * n..(batch + 1) * m * n];
        for i in 0..m {
            let orow = &mut oo[i * n..(i + 1) * n];
            for (p, &av) in ao[i * k..(i + 1) * k].iter().enumerate() {
                let brow = &bo[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
    }
    Tensor::new(mat_shape(a.rank(), ba, m, n), out)
}

/// `a · bᵀ`.
pub(crate) fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (ba, m, k) = mat_dims("matmul_nt", a)?;
    let (bb, n, k2) = mat_dims("matmul_nt", b)?;
    if a.rank() != b.rank() || ba != bb || k != k2 {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![S::zero(); ba * m * n];
    let (ad, bd) = (a.data(), b.data());
    for batch in 0..ba {
        let ao = &ad[batch * m * k..(batch + 1) * m * k];
        let bo = &bd[batch * n * k..(batch + 1) * n * k];
        for i in 0..m {
            let arow = &ao[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bo[j * k..(j + 1) * k];
                let dot = arow.iter().zip(brow).fold(S::zero(), |acc, (&x, &y)| acc + x * y);
                out[batch * m * n + i * n + j] = dot;
            }
        }
    }
    Tensor::new(mat_shape(a.rank(), ba, m, n), out)
}

/// `aᵀ · b`.
pub(crate) fn matmul_tn<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (ba, k, m) = mat_dims("matmul_tn", a)?;
    let (bb, k2, n) = mat_dims("matmul_tn", b)?;
    if a.rank() != b.rank() || ba != bb || k != k2 {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = vec![S::zero(); ba * m * n];
    let (ad, bd) = (a.data(), b.data());
    for batch in 0..ba {
        let ao = &ad[batch * k * m..(batch + 1) * k * m];
        let bo = &bd[batch * k * n..(batch + 1) * k * n];
        let oo = &mut out[batch * m * n..(batch + 1) * m * n];
        for p in 0..k {
            let brow = &bo[p * n..(p + 1) * n];
            for i in 0..m {
                let av = ao[p * m + i];
                for (o, &bv) in oo[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
    }
    Tensor::new(mat_shape(a.rank(), ba, m, n), out)
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
pub(crate) fn transpose<S: Scalar>(a: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, r, c) = mat_dims("transpose", a)?;
    let mut out = vec![S::zero(); a.len()];
    let d = a.data();
    for b in 0..batch {
        let off = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[off + j * r + i] = d[off + i * c + j];
            }
        }
    }
    Tensor::new(mat_shape(a.rank(), batch, c, r), out)
}

/// Applies `f` to every lane along `axis`, producing one output per lane.
fn reduce_lanes<S: Scalar>(
    op: &'static str,
    a: &Tensor<S>,
    axis: usize,
    mut f: impl FnMut(&mut dyn Iterator<Item = S>) -> S,
) -> Result<Tensor<S>> {
    let (outer, len, inner) = axis_split(op, a.shape(), axis)?;
    if len == 0 {
        return Err(Error::shape(op, a.shape(), &[axis]));
    }
    let d = a.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let mut lane = (0..len).map(|k| d[base + k * inner + i]);
            out.push(f(&mut lane));
        }
    }
    Tensor::new(removed_axis(a.shape(), axis), out)
}

pub(crate) fn sum_axis<S: Scalar>(a: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    reduce_lanes("sum", a, axis, |lane| lane.fold(S::zero(), |acc, x| acc + x))
}

/// Maximum along `axis` plus, per lane, the index of the first maximal entry.
pub(crate) fn max_axis<S: Scalar>(a: &Tensor<S>, axis: usize) -> Result<(Tensor<S>, Vec<usize>)> {
    let mut argmax = Vec::new();
    let t = reduce_lanes("max", a, axis, |lane| {
        let mut best = S::neg_infinity();
        let mut best_k = 0;
        for (k, x) in lane.enumerate() {
            if x > best || k == 0 {
                best = x;
                best_k = k;
            }
        }
        argmax.push(best_k);
        best
    })?;
    Ok((t, argmax))
}

pub(crate) fn logsumexp_axis<S: Scalar>(a: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let (outer, len, inner) = axis_split("logsumexp", a.shape(), axis)?;
    if len == 0 {
        return Err(Error::shape("logsumexp", a.shape(), &[axis]));
    }
    let d = a.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..inner {
            let at = |k: usize| d[base + k * inner + i];
            let m = (0..len).map(at).fold(S::neg_infinity(), S::max);
            let s = (0..len).map(|k| (at(k) - m).exp()).fold(S::zero(), |acc, x| acc + x);
            out.push(m + s.ln());
        }
    }
    Tensor::new(removed_axis(a.shape(), axis), out)
}

/// `x - logsumexp(x)` along `axis`, keeping the shape.
pub(crate) fn log_softmax_axis<S: Scalar>(a: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let lse = logsumexp_axis(a, axis)?;
    let (outer, len, inner) = axis_split("log_softmax", a.shape(), axis)?;
    let d = a.data();
    let l = lse.data();
    let mut out = vec![S::zero(); a.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for k in 0..len {
            for i in 0..inner {
                let idx = base + k * inner + i;
                out[idx] = d[idx] - l[o * inner + i];
            }
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

/// Inserts a new axis of extent `count` at position `axis`, copying the input.
pub(crate) fn repeat_axis<S: Scalar>(a: &Tensor<S>, axis: usize, count: usize) -> Result<Tensor<S>> {
    if axis > a.rank() {
        return Err(Error::shape("repeat", a.shape(), &[axis]));
    }
    let outer: usize = a.shape()[..axis].iter().product();
    let inner: usize = a.shape()[axis..].iter().product();
    let d = a.data();
    let mut out = Vec::with_capacity(a.len() * count);
    for o in 0..outer {
        let src = &d[o * inner..(o + 1) * inner];
        for _ in 0..count {
            out.extend_from_slice(src);
        }
    }
    let mut shape = a.shape().to_vec();
    shape.insert(axis, count);
    Tensor::new(shape, out)
}

pub(crate) fn slice_axis<S: Scalar>(a: &Tensor<S>, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
    let (outer, full, inner) = axis_split("slice", a.shape(), axis)?;
    if start + len > full {
        return Err(Error::shape("slice", a.shape(), &[axis, start, len]));
    }
    let d = a.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * full * inner + start * inner;
        out.extend_from_slice(&d[base..base + len * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, out)
}

/// Adds `g` into the `[start, start+len)` window of a zero tensor of `shape`.
pub(crate) fn unslice_axis<S: Scalar>(
    g: &Tensor<S>,
    shape: &[usize],
    axis: usize,
    start: usize,
) -> Result<Tensor<S>> {
    let (outer, full, inner) = axis_split("slice", shape, axis)?;
    let len = g.shape()[axis];
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    let gd = g.data();
    for o in 0..outer {
        let dst = o * full * inner + start * inner;
        let src = o * len * inner;
        od[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
    }
    Ok(out)
}

pub(crate) fn concat_axis<S: Scalar>(parts: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::shape("concat", first.shape(), &[axis]));
    }
    for p in parts {
        let ok = p.rank() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, out)
}

fn canonical_cmp<S: Scalar>(a: &S, b: &S) -> Ordering {
    a.as_f64().total_cmp(&b.as_f64())
}

/// Pairwise (tree) summation of an already-ordered slice.
fn pairwise_sum<S: Scalar>(xs: &[S]) -> S {
    match xs.len() {
        0 => S::zero(),
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (l, r) = xs.split_at(n / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

/// Sum of a multiset whose result depends only on the values, never on the
/// order they arrive in: values are sorted, then tree-summed.
pub(crate) fn canonical_sum<S: Scalar>(buf: &mut [S]) -> S {
    buf.sort_by(canonical_cmp);
    pairwise_sum(buf)
}

pub(crate) fn sum_canonical_axis<S: Scalar>(a: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    let mut buf = Vec::new();
    reduce_lanes("sum_canonical", a, axis, |lane| {
        buf.clear();
        buf.extend(lane);
        canonical_sum(&mut buf)
    })
}

/// `pᵀ · x` where each output entry is a canonical sum over the shared row
/// axis, so reordering the rows of both operands together cannot change a bit.
pub(crate) fn contract_rows<S: Scalar>(p: &Tensor<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let (bp, n, m) = mat_dims("contract_rows", p)?;
    let (bx, n2, d) = mat_dims("contract_rows", x)?;
    if p.rank() != x.rank() || bp != bx || n != n2 {
        return Err(Error::shape("contract_rows", p.shape(), x.shape()));
    }
    let (pd, xd) = (p.data(), x.data());
    let mut out = Vec::with_capacity(bp * m * d);
    let mut buf = Vec::with_capacity(n);
    for b in 0..bp {
        let po = &pd[b * n * m..(b + 1) * n * m];
        let xo = &xd[b * n * d..(b + 1) * n * d];
        for j in 0..m {
            for c in 0..d {
                buf.clear();
                buf.extend((0..n).map(|i| po[i * m + j] * xo[i * d + c]));
                out.push(canonical_sum(&mut buf));
            }
        }
    }
    Tensor::new(mat_shape(p.rank(), bp, m, d), out)
}
