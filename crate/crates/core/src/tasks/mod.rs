//! Synthetic set tasks with exact label oracles.

mod dataset;
pub mod digits;
pub mod flow;
pub mod kary;
pub mod percentile;
pub mod spiked;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, DatasetHeader, SetInstance, TaskKind};
pub use digits::{gen_biased_maxdigit, load_mnist_idx, synthetic_digits, ImageSet};
pub use flow::{gen_flow_dataset, gen_flowgraph, oracle_maxflow, FlowGraph};
pub use kary::{gen_kary_distance, oracle_kary};
pub use percentile::{gen_percentile, oracle_percentile};
pub use spiked::{gen_spiked, oracle_top_eigvec};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::Tensor;

/// Synthetic images per digit when no MNIST files are configured.
pub const SYNTHETIC_PER_DIGIT: usize = 200;

/// Everything needed to regenerate a task's data.
///
/// `d` is read by the k-ary and spiked tasks only; the other tasks fix their
/// element width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub r: f64,
    /// Largest percentile value; defaults to `n`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_max: Option<u32>,
    pub sigma: f64,
    pub vertices: usize,
    pub edges: usize,
    pub cap_max: u32,
    pub count: usize,
    /// Size of a separately generated test set. Without it the data is
    /// split 80/10/10.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_count: Option<usize>,
    pub seed: u64,
    /// Max-digit training sets place the maximum last.
    pub biased: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_labels: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::Percentile,
            n: 20,
            d: 2,
            k: 2,
            r: 50.0,
            value_max: None,
            sigma: 0.1,
            vertices: 100,
            edges: 300,
            cap_max: 20,
            count: 1000,
            test_count: None,
            seed: 0,
            biased: true,
            mnist_images: None,
            mnist_labels: None,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.count == 0 {
            return bad("task count must be positive".into());
        }
        if self.mnist_images.is_some() != self.mnist_labels.is_some() {
            return bad("mnist_images and mnist_labels must be given together".into());
        }
        match self.kind {
            TaskKind::Kary if !(self.k == 2 || self.k == 3) || self.n < self.k || self.d == 0 => {
                bad(format!("k-ary task needs k in {{2, 3}}, n >= k, d >= 1 (k = {}, n = {}, d = {})", self.k, self.n, self.d))
            }
            TaskKind::Percentile if !(self.r > 0.0 && self.r <= 100.0) || self.n == 0 => {
                bad(format!("percentile task needs r in (0, 100] and n >= 1 (r = {}, n = {})", self.r, self.n))
            }
            TaskKind::Maxflow if self.n == 0 || self.n >= self.vertices || self.edges + 1 < self.vertices || self.cap_max == 0 => bad(format!(
                "max-flow task needs 1 <= n < vertices, edges >= vertices - 1, cap_max >= 1 (n = {}, vertices = {}, edges = {})",
                self.n, self.vertices, self.edges
            )),
            TaskKind::Spiked if self.n < 2 || self.d < 2 || !(self.sigma >= 0.0) => {
                bad(format!("spiked task needs n >= 2, d >= 2, sigma >= 0 (n = {}, d = {}, sigma = {})", self.n, self.d, self.sigma))
            }
            TaskKind::Maxdigit if self.n == 0 || self.n > digits::DIGIT_CLASSES => {
                bad(format!("max-digit sets hold 1 to 10 images, got n = {}", self.n))
            }
            _ => Ok(()),
        }
    }

    fn images(&self) -> Result<ImageSet> {
        match (&self.mnist_images, &self.mnist_labels) {
            (Some(images), Some(labels)) => load_mnist_idx(images, labels),
            _ => Ok(synthetic_digits(SYNTHETIC_PER_DIGIT, derive_seed(self.seed, "digit-pool", 0))),
        }
    }

    fn generate_with(&self, count: usize, seed: u64, unbiased: bool) -> Result<Dataset> {
        match self.kind {
            TaskKind::Kary => gen_kary_distance(self.n, self.d, self.k, count, seed),
            TaskKind::Percentile => {
                let value_max = self.value_max.unwrap_or(self.n as u32);
                gen_percentile(self.n, self.r, value_max, count, seed)
            }
            TaskKind::Maxflow => {
                let g = gen_flowgraph(self.vertices, self.edges, self.cap_max, derive_seed(self.seed, "graph", 0))?;
                gen_flow_dataset(&g, self.n, count, seed)
            }
            TaskKind::Spiked => gen_spiked(self.n, self.d, self.sigma, count, seed),
            TaskKind::Maxdigit => gen_biased_maxdigit(&self.images()?, self.n, count, seed, self.biased && !unbiased),
        }
    }

    /// The main dataset of `count` instances.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        self.generate_with(self.count, self.seed, false)
    }

    /// The separate test set, when `test_count` is set. It shares the flow
    /// graph and image pool with the main dataset, uses an independent seed,
    /// and max-digit test sets are never biased.
    pub fn generate_test(&self) -> Result<Option<Dataset>> {
        self.validate()?;
        self.test_count
            .map(|count| self.generate_with(count, derive_seed(self.seed, "test-set", 0), true))
            .transpose()
    }
}

/// Outcome of recomputing every stored label.
#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub checked: usize,
    /// Indices of instances whose stored data disagrees with the oracle.
    pub mismatches: Vec<usize>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Float labels may differ from their recomputation by at most this much.
pub const LABEL_TOLERANCE: f64 = 1e-12;

fn scalar_label(inst: &SetInstance) -> f64 {
    inst.label.data()[0]
}

fn max_digit_ok(inst: &SetInstance, biased: bool) -> bool {
    let Some(digits) = &inst.digits else {
        return false;
    };
    let Some(&max) = digits.iter().max() else {
        return false;
    };
    let mut sorted = digits.clone();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len() == digits.len()
        && inst.label == digits::one_hot(max as usize, digits::DIGIT_CLASSES)
        && (!biased || digits.last() == Some(&max))
}

/// Checks every instance of `ds` against its task oracle. Spiked labels are
/// the planted spike, so those instances are regenerated from the header
/// seed and their generation index and compared bit for bit.
pub fn verify_dataset(ds: &Dataset) -> Result<Verification> {
    let h = &ds.header;
    let missing = |what: &str| Error::Format(format!("{} dataset header lacks {what}", h.task));
    let mut mismatches = Vec::new();
    match h.task {
        TaskKind::Kary => {
            let k = h.k.ok_or_else(|| missing("k"))?;
            for (i, inst) in ds.instances.iter().enumerate() {
                if (oracle_kary(&inst.set, k)? - scalar_label(inst)).abs() > LABEL_TOLERANCE {
                    mismatches.push(i);
                }
            }
        }
        TaskKind::Percentile => {
            let r = h.r.ok_or_else(|| missing("r"))?;
            for (i, inst) in ds.instances.iter().enumerate() {
                if oracle_percentile(&inst.set, r)? != scalar_label(inst) {
                    mismatches.push(i);
                }
            }
        }
        TaskKind::Maxflow => {
            let g = h.graph.as_ref().ok_or_else(|| missing("graph"))?;
            let embedding = flow::graph_embedding(g, h.seed);
            for (i, inst) in ds.instances.iter().enumerate() {
                let ok = flow::decode_vertices(g, &inst.set).and_then(|hs| {
                    let same_set = flow::encode_vertices(g, &hs, &embedding)? == inst.set;
                    Ok(same_set && oracle_maxflow(g, &hs)? as f64 == scalar_label(inst))
                });
                if !matches!(ok, Ok(true)) {
                    mismatches.push(i);
                }
            }
        }
        TaskKind::Spiked => {
            let sigma = h.sigma.ok_or_else(|| missing("sigma"))?;
            for (i, inst) in ds.instances.iter().enumerate() {
                if *inst != spiked::spiked_instance(h.n, h.d, sigma, h.seed, ds.origin_of(i))? {
                    mismatches.push(i);
                }
            }
        }
        TaskKind::Maxdigit => {
            let biased = h.biased.ok_or_else(|| missing("biased"))?;
            for (i, inst) in ds.instances.iter().enumerate() {
                if !max_digit_ok(inst, biased) {
                    mismatches.push(i);
                }
            }
        }
    }
    Ok(Verification {
        checked: ds.len(),
        mismatches,
    })
}

/// Stacks the sets of `ds` into `[count, n, d]`.
pub fn stacked_sets(ds: &Dataset) -> Result<Tensor> {
    ds.sets(&(0..ds.len()).collect::<Vec<_>>())
}
