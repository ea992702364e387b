use rand::Rng;

use crate::error::Result;
use crate::nn::{dropout, Activation, Binder, BoundLinear, LinearLayer};
use crate::{Tensor, Var};

/// A chain of fully connected layers. Hidden layers use relu and, in
/// training mode, dropout; the optional head is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct FcStack {
    pub layers: Vec<LinearLayer>,
}

pub struct BoundFcStack<'t> {
    layers: Vec<BoundLinear<'t, f64>>,
    activations: Vec<Activation>,
}

impl FcStack {
    /// `hidden` relu layers of `width`, then a linear head to `output` when
    /// given.
    pub fn new(input: usize, width: usize, hidden: usize, output: Option<usize>, rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut dim = input;
        for _ in 0..hidden {
            layers.push(LinearLayer::new(dim, width, Activation::Relu, rng)?);
            dim = width;
        }
        if let Some(out) = output {
            layers.push(LinearLayer::new(dim, out, Activation::None, rng)?);
        }
        Ok(FcStack { layers })
    }

    pub fn identity() -> Self {
        FcStack { layers: Vec::new() }
    }

    pub fn output_dim(&self, input: usize) -> usize {
        self.layers.last().map_or(input, LinearLayer::output_dim)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(LinearLayer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(LinearLayer::params_mut).collect()
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &layer.weight));
            out.push((format!("{prefix}.{i}.bias"), &layer.bias));
        }
        out
    }

    pub fn bind<'t>(&self, b: &mut Binder<'t, f64>) -> BoundFcStack<'t> {
        BoundFcStack {
            layers: self.layers.iter().map(|l| l.bind(b)).collect(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }
}

impl<'t> BoundFcStack<'t> {
    /// `x: [rows, in] -> [rows, out]`.
    pub fn forward(&self, x: &Var<'t>, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        let mut h = *x;
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = layer.forward(&h)?;
            if *act != Activation::None {
                h = dropout(&h, rate, rng, training)?;
            }
        }
        Ok(h)
    }
}
