use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

/// Per-feature input scaling and optional per-coordinate label
/// standardisation. Inputs are only scaled, never shifted, so zero stays
/// zero and sign patterns are preserved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_scale: Vec<f64>,
    pub label_mean: Vec<f64>,
    pub label_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Normalizer {
            input_scale: vec![1.0; input_dim],
            label_mean: vec![0.0; output_dim],
            label_std: vec![1.0; output_dim],
        }
    }

    /// Input scale `1 / rms` per feature over every element of every set;
    /// label mean and std per coordinate when `standardize_labels`.
    pub fn fit(sets: &[Tensor], labels: &[Tensor], standardize_labels: bool) -> Result<Self> {
        let (Some(first_set), Some(first_label)) = (sets.first(), labels.first()) else {
            return Err(Error::invalid("cannot fit a normalizer on an empty dataset"));
        };
        let d = first_set.cols();
        let l = first_label.len();
        let mut sq = vec![0.0; d];
        let mut count = 0usize;
        for s in sets {
            for i in 0..s.rows() {
                for (acc, &v) in sq.iter_mut().zip(s.row(i)) {
                    *acc += v * v;
                }
                count += 1;
            }
        }
        let input_scale = sq
            .iter()
            .map(|&s| {
                let rms = (s / count as f64).sqrt();
                if rms > 1e-12 {
                    1.0 / rms
                } else {
                    1.0
                }
            })
            .collect();
        let mut norm = Normalizer::identity(d, l);
        norm.input_scale = input_scale;
        if standardize_labels {
            let m = labels.len() as f64;
            for c in 0..l {
                let mean = labels.iter().map(|y| y.data()[c]).sum::<f64>() / m;
                let var = labels.iter().map(|y| (y.data()[c] - mean).powi(2)).sum::<f64>() / m;
                norm.label_mean[c] = mean;
                norm.label_std[c] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
        Ok(norm)
    }

    /// Scales the last axis of `x` (`[.., d]`).
    pub fn inputs(&self, x: &Tensor) -> Tensor {
        let d = self.input_scale.len();
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v *= self.input_scale[k % d];
        }
        out
    }

    /// Label space to model output space (`[.., L]`).
    pub fn labels(&self, y: &Tensor) -> Tensor {
        let l = self.label_mean.len();
        let mut out = y.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.label_mean[k % l]) / self.label_std[k % l];
        }
        out
    }

    /// Model output space back to label space.
    pub fn outputs(&self, y: &Tensor) -> Tensor {
        let l = self.label_mean.len();
        let mut out = y.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.label_std[k % l] + self.label_mean[k % l];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let sets = vec![Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap()];
        let labels = vec![Tensor::vector(vec![2.0]), Tensor::vector(vec![6.0])];
        let n = Normalizer::fit(&sets, &labels, true).unwrap();
        assert_eq!(n.label_mean, vec![4.0]);
        assert_eq!(n.label_std, vec![2.0]);
        let y = Tensor::vector(vec![5.0]);
        assert_eq!(n.outputs(&n.labels(&y)), y);
        let rms = (12.5f64).sqrt();
        assert!((n.input_scale[0] - 1.0 / rms).abs() < 1e-15);
    }
}
