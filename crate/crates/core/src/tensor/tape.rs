use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, accumulate};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, S),
    AddScalar(usize),
    MatMul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Sum(usize, usize),
    SumCanonical(usize, usize),
    Mean(usize, usize),
    Max { input: usize, axis: usize, argmax: Vec<usize> },
    LogSumExp(usize, usize),
    LogSoftmax(usize, usize),
    SumAll(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Transpose(usize),
    Reshape(usize),
    Repeat(usize, usize),
    ContractRows(usize, usize),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records differentiable operations in execution order.
///
/// A tape is single-owner: build it, run one forward pass, call
/// [`Tape::backward`], then drop it. Tapes are `Send`, so separate threads
/// can each own one.
pub struct Tape<S: Scalar = f64> {
    id: u64,
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar = f64> {
    tape: &'t Tape<S>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients<S: Scalar = f64> {
    tape_id: u64,
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
    leaves: Vec<bool>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Records a trainable input; gradients are reported for it.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Constant, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor<S>, op: Op<S>, inputs: &[usize]) -> Var<'_, S> {
        let rg = self.requires(inputs);
        self.push(value, op, rg)
    }

    fn check_owner(&self, v: &Var<'_, S>) -> Result<()> {
        if !std::ptr::eq(self, v.tape) {
            return Err(Error::Gradient("variable belongs to a different tape".into()));
        }
        Ok(())
    }

    /// Back-propagates from a scalar `loss`, returning gradients for every
    /// node that depends on a leaf.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        self.check_owner(&loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Gradient(format!(
                "loss must be scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), S::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = backward_rule(&nodes, node, &g)?;
            for (input, contrib) in contributions {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => accumulate(acc, &contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients {
            tape_id: self.id,
            shapes: nodes[..=loss.id].iter().map(|n| n.value.shape().to_vec()).collect(),
            leaves: nodes[..=loss.id].iter().map(|n| matches!(n.op, Op::Leaf)).collect(),
            grads,
        })
    }
}

fn value<S: Scalar>(nodes: &[Node<S>], id: usize) -> &Tensor<S> {
    &nodes[id].value
}

/// Per-input gradient contributions of one recorded op.
fn backward_rule<S: Scalar>(nodes: &[Node<S>], node: &Node<S>, g: &Tensor<S>) -> Result<Vec<(usize, Tensor<S>)>> {
    let out = &node.value;
    let v = |id| value(nodes, id);
    let map_with = |id: usize, f: &dyn Fn(S, S, S) -> S| -> Tensor<S> {
        // f(grad, input, output)
        let x = v(id);
        let data = g
            .data()
            .iter()
            .zip(x.data())
            .zip(out.data())
            .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
    };
    Ok(match node.op {
        Op::Leaf | Op::Constant => Vec::new(),
        Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
        Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
        Op::Mul(a, b) => vec![
            (a, kernels::zip("mul", g, v(b), |x, y| x * y)?),
            (b, kernels::zip("mul", g, v(a), |x, y| x * y)?),
        ],
        Op::Div(a, b) => {
            let (av, bv) = (v(a), v(b));
            let ga = kernels::zip("div", g, bv, |x, y| x / y)?;
            let gb_data = g
                .data()
                .iter()
                .zip(av.data())
                .zip(bv.data())
                .map(|((&gi, &ai), &bi)| -gi * ai / (bi * bi))
                .collect();
            vec![(a, ga), (b, Tensor::new(bv.shape().to_vec(), gb_data)?)]
        }
        Op::Neg(a) => vec![(a, g.map(|x| -x))],
        Op::Scale(a, c) => vec![(a, g.map(|x| x * c))],
        Op::AddScalar(a) => vec![(a, g.clone())],
        Op::MatMul(a, b) => vec![
            (a, kernels::matmul_nt(g, v(b))?),
            (b, kernels::matmul_tn(v(a), g)?),
        ],
        Op::Relu(a) => vec![(a, map_with(a, &|gi, xi, _| if xi > S::zero() { gi } else { S::zero() }))],
        Op::Sigmoid(a) => vec![(a, map_with(a, &|gi, _, y| gi * y * (S::one() - y)))],
        Op::Tanh(a) => vec![(a, map_with(a, &|gi, _, y| gi * (S::one() - y * y)))],
        Op::Exp(a) => vec![(a, map_with(a, &|gi, _, y| gi * y))],
        Op::Log(a) => vec![(a, map_with(a, &|gi, x, _| gi / x))],
        Op::Sum(a, axis) | Op::SumCanonical(a, axis) => {
            let len = v(a).shape()[axis];
            vec![(a, kernels::repeat_axis(g, axis, len)?)]
        }
        Op::Mean(a, axis) => {
            let len = v(a).shape()[axis];
            let inv = S::one() / S::lit(len as f64);
            vec![(a, kernels::repeat_axis(&g.map(|x| x * inv), axis, len)?)]
        }
        Op::Max { input, axis, ref argmax } => {
            let x = v(input);
            let (outer, len, inner) = kernels::axis_split("max", x.shape(), axis)?;
            let mut gx = Tensor::zeros(x.shape());
            let gd = gx.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let lane = o * inner + i;
                    gd[o * len * inner + argmax[lane] * inner + i] = g.data()[lane];
                }
            }
            vec![(input, gx)]
        }
        Op::LogSumExp(a, axis) => {
            let x = v(a);
            let len = x.shape()[axis];
            let y = kernels::repeat_axis(out, axis, len)?;
            let gr = kernels::repeat_axis(g, axis, len)?;
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(gr.data())
                .map(|((&xi, &yi), &gi)| gi * (xi - yi).exp())
                .collect();
            vec![(a, Tensor::new(x.shape().to_vec(), data)?)]
        }
        Op::LogSoftmax(a, axis) => {
            let len = out.shape()[axis];
            let gsum = kernels::repeat_axis(&kernels::sum_axis(g, axis)?, axis, len)?;
            let data = g
                .data()
                .iter()
                .zip(out.data())
                .zip(gsum.data())
                .map(|((&gi, &yi), &si)| gi - yi.exp() * si)
                .collect();
            vec![(a, Tensor::new(out.shape().to_vec(), data)?)]
        }
        Op::SumAll(a) => vec![(a, Tensor::full(v(a).shape(), g.data()[0]))],
        Op::Concat { ref inputs, axis } => {
            let mut start = 0;
            let mut res = Vec::with_capacity(inputs.len());
            for &i in inputs {
                let len = v(i).shape()[axis];
                res.push((i, kernels::slice_axis(g, axis, start, len)?));
                start += len;
            }
            res
        }
        Op::Slice { input, axis, start } => {
            vec![(input, kernels::unslice_axis(g, v(input).shape(), axis, start)?)]
        }
        Op::Transpose(a) => vec![(a, kernels::transpose(g)?)],
        Op::Reshape(a) => vec![(a, g.reshape(v(a).shape())?)],
        Op::Repeat(a, axis) => vec![(a, kernels::sum_axis(g, axis)?)],
        Op::ContractRows(p, x) => vec![
            (p, kernels::matmul_nt(v(x), g)?),
            (x, kernels::matmul(v(p), g)?),
        ],
    })
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to leaf `var`. Leaves the loss does
    /// not depend on get a zero tensor.
    pub fn wrt(&self, var: Var<'_, S>) -> Result<Tensor<S>> {
        if var.tape.id != self.tape_id {
            return Err(Error::Gradient("leaf belongs to a different tape".into()));
        }
        if var.id >= self.leaves.len() {
            return Err(Error::Gradient(format!("node {} recorded after the loss", var.id)));
        }
        if !self.leaves[var.id] {
            return Err(Error::Gradient(format!("node {} is not a trainable leaf", var.id)));
        }
        Ok(self.grads[var.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id])))
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    /// Borrow of the recorded value.
    pub fn value_ref(&self) -> Ref<'t, Tensor<S>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Tensor<S> {
        self.value_ref().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    fn same(&self, other: &Var<'t, S>) -> Result<()> {
        self.tape.check_owner(other)
    }

    fn unary(&self, op: Op<S>, f: impl FnOnce(&Tensor<S>) -> Result<Tensor<S>>) -> Result<Var<'t, S>> {
        let out = f(&self.value_ref())?;
        Ok(self.tape.record(out, op, &[self.id]))
    }

    fn binary(
        &self,
        other: &Var<'t, S>,
        op: Op<S>,
        f: impl FnOnce(&Tensor<S>, &Tensor<S>) -> Result<Tensor<S>>,
    ) -> Result<Var<'t, S>> {
        self.same(other)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.tape.record(out, op, &[self.id, other.id]))
    }

    pub fn add(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| kernels::zip("add", a, b, |x, y| x + y))
    }

    pub fn sub(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| kernels::zip("sub", a, b, |x, y| x - y))
    }

    pub fn mul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| kernels::zip("mul", a, b, |x, y| x * y))
    }

    pub fn div(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::Div(self.id, other.id), |a, b| {
            if b.data().iter().any(|x| x.is_zero()) {
                return Err(Error::Domain {
                    op: "div",
                    detail: "division by zero".into(),
                });
            }
            kernels::zip("div", a, b, |x, y| x / y)
        })
    }

    pub fn neg(&self) -> Var<'t, S> {
        let out = self.value_ref().map(|x| -x);
        self.tape.record(out, Op::Neg(self.id), &[self.id])
    }

    pub fn scale(&self, c: S) -> Var<'t, S> {
        let out = self.value_ref().map(|x| x * c);
        self.tape.record(out, Op::Scale(self.id, c), &[self.id])
    }

    pub fn add_scalar(&self, c: S) -> Var<'t, S> {
        let out = self.value_ref().map(|x| x + c);
        self.tape.record(out, Op::AddScalar(self.id), &[self.id])
    }

    /// Matrix product; rank-3 operands are multiplied batch by batch.
    pub fn matmul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(other, Op::MatMul(self.id, other.id), kernels::matmul)
    }

    pub fn relu(&self) -> Var<'t, S> {
        let out = self.value_ref().map(|x| x.max(S::zero()));
        self.tape.record(out, Op::Relu(self.id), &[self.id])
    }

    pub fn sigmoid(&self) -> Var<'t, S> {
        let out = self.value_ref().map(|x| {
            if x >= S::zero() {
                S::one() / (S::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (S::one() + e)
            }
        });
        self.tape.record(out, Op::Sigmoid(self.id), &[self.id])
    }

    pub fn tanh(&self) -> Var<'t, S> {
        let out = self.value_ref().map(|x| x.tanh());
        self.tape.record(out, Op::Tanh(self.id), &[self.id])
    }

    pub fn exp(&self) -> Var<'t, S> {
        let out = self.value_ref().map(|x| x.exp());
        self.tape.record(out, Op::Exp(self.id), &[self.id])
    }

    pub fn log(&self) -> Result<Var<'t, S>> {
        self.unary(Op::Log(self.id), |x| {
            if let Some(bad) = x.data().iter().find(|v| **v <= S::zero()) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
            Ok(x.map(|v| v.ln()))
        })
    }

    pub fn square(&self) -> Var<'t, S> {
        self.mul(self).expect("same shape")
    }

    pub fn sum(&self, axis: usize) -> Result<Var<'t, S>> {
        self.unary(Op::Sum(self.id, axis), |x| kernels::sum_axis(x, axis))
    }

    /// Sum along `axis` whose value is independent of the order of the
    /// entries in each lane (sorted pairwise summation).
    pub fn sum_canonical(&self, axis: usize) -> Result<Var<'t, S>> {
        self.unary(Op::SumCanonical(self.id, axis), |x| kernels::sum_canonical_axis(x, axis))
    }

    pub fn mean(&self, axis: usize) -> Result<Var<'t, S>> {
        self.unary(Op::Mean(self.id, axis), |x| {
            let len = S::lit(x.shape().get(axis).copied().unwrap_or(1) as f64);
            Ok(kernels::sum_axis(x, axis)?.map(|v| v / len))
        })
    }

    /// Maximum along `axis`; the gradient flows to the first maximal entry.
    pub fn max(&self, axis: usize) -> Result<Var<'t, S>> {
        let (out, argmax) = kernels::max_axis(&self.value_ref(), axis)?;
        Ok(self.tape.record(
            out,
            Op::Max {
                input: self.id,
                axis,
                argmax,
            },
            &[self.id],
        ))
    }

    pub fn logsumexp(&self, axis: usize) -> Result<Var<'t, S>> {
        self.unary(Op::LogSumExp(self.id, axis), |x| kernels::logsumexp_axis(x, axis))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t, S>> {
        self.unary(Op::LogSoftmax(self.id, axis), |x| kernels::log_softmax_axis(x, axis))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&self) -> Var<'t, S> {
        let out = Tensor::scalar(self.value_ref().sum_all());
        self.tape.record(out, Op::SumAll(self.id), &[self.id])
    }

    pub fn transpose(&self) -> Result<Var<'t, S>> {
        self.unary(Op::Transpose(self.id), kernels::transpose)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, S>> {
        self.unary(Op::Reshape(self.id), |x| x.reshape(shape))
    }

    /// Inserts a new axis of extent `count` at `axis`.
    pub fn repeat(&self, axis: usize, count: usize) -> Result<Var<'t, S>> {
        self.unary(Op::Repeat(self.id, axis), |x| kernels::repeat_axis(x, axis, count))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, S>> {
        self.unary(
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
            |x| kernels::slice_axis(x, axis, start, len),
        )
    }

    /// `selfᵀ · x` over the leading row axis with order-independent sums.
    pub fn contract_rows(&self, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.binary(x, Op::ContractRows(self.id, x.id), kernels::contract_rows)
    }
}

/// Concatenates along `axis`. All parts must live on the same tape.
pub fn concat<'t, S: Scalar>(parts: &[Var<'t, S>], axis: usize) -> Result<Var<'t, S>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    for p in parts {
        first.same(p)?;
    }
    let tape = first.tape;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let out = {
        let nodes = tape.nodes.borrow();
        let refs: Vec<&Tensor<S>> = ids.iter().map(|&i| &nodes[i].value).collect();
        kernels::concat_axis(&refs, axis)?
    };
    Ok(tape.record(out, Op::Concat { inputs: ids.clone(), axis }, &ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(xs: &[f64]) -> Tensor<f64> {
        Tensor::vector(xs.to_vec())
    }

    #[test]
    fn relu_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![-1.0, 2.0], vec![0.0, -3.0]]).unwrap());
        assert_eq!(x.relu().value().data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, 2.0, 3.0]));
        let loss = x.mul(&x).unwrap().sum_all();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grad_of_relu_sum() {
        let tape = Tape::new();
        let x = tape.leaf(vec1(&[-1.0, 2.0]));
        let loss = x.relu().sum_all();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn max_gradient_goes_to_first_maximum() {
        let tape = Tape::new();
        let x = tape.leaf(vec1(&[3.0, 1.0, 3.0]));
        let loss = x.max(0).unwrap().sum_all();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Gradient(_))));
    }

    #[test]
    fn foreign_leaf_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t1.leaf(vec1(&[1.0]));
        let y = t2.leaf(vec1(&[1.0]));
        let g = t1.backward(x.sum_all()).unwrap();
        assert!(g.wrt(y).is_err());
        assert!(x.add(&y).is_err());
    }

    #[test]
    fn constant_is_not_a_leaf() {
        let tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0]));
        let c = tape.constant(vec1(&[2.0]));
        let g = tape.backward(x.mul(&c).unwrap().sum_all()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0]);
        assert!(g.wrt(c).is_err());
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(vec1(&[1.0, 1.0]));
        let y = tape.leaf(vec1(&[5.0]));
        let g = tape.backward(x.sum_all()).unwrap();
        assert_eq!(g.wrt(y).unwrap().data(), &[0.0]);
    }

    #[test]
    fn log_domain_error() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(vec1(&[1.0, 0.0]));
        assert!(matches!(x.log(), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn shape_mismatch_is_structured() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(vec1(&[1.0, 2.0]));
        let b = tape.leaf(vec1(&[1.0, 2.0, 3.0]));
        match a.add(&b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected {:?}", other.map(|v| v.shape())),
        }
    }

    #[test]
    fn works_in_single_precision() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![1.5f32, -2.0]));
        let g = tape.backward(x.square().sum_all()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0f32, -4.0]);
    }
}
