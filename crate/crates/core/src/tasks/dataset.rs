use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::flow::FlowGraph;
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Kary,
    Percentile,
    Maxflow,
    Spiked,
    Maxdigit,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Kary => "kary",
            TaskKind::Percentile => "percentile",
            TaskKind::Maxflow => "maxflow",
            TaskKind::Spiked => "spiked",
            TaskKind::Maxdigit => "maxdigit",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub task: TaskKind,
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub seed: u64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biased: Option<bool>,
    /// Image source of a max-digit dataset: `mnist` or `synthetic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<FlowGraph>,
    /// Generation index of each instance, present once the dataset has been
    /// subset or split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<usize>>,
}

impl DatasetHeader {
    pub fn new(task: TaskKind, n: usize, d: usize, l: usize, seed: u64, count: usize) -> Self {
        DatasetHeader {
            task,
            n,
            d,
            l,
            seed,
            count,
            k: None,
            r: None,
            value_max: None,
            sigma: None,
            biased: None,
            source: None,
            graph: None,
            origin: None,
        }
    }
}

/// One set `[n, d]` with its label `[L]`. Max-digit sets also carry the
/// digit of every element.
#[derive(Clone, Debug, PartialEq)]
pub struct SetInstance {
    pub set: Tensor,
    pub label: Tensor,
    pub digits: Option<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    set: Vec<Vec<f64>>,
    label: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    digits: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub instances: Vec<SetInstance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        serde_json::to_writer(&mut *w, &self.header)?;
        w.write_all(b"\n")?;
        for inst in &self.instances {
            let rec = Record {
                set: (0..inst.set.rows()).map(|i| inst.set.row(i).to_vec()).collect(),
                label: inst.label.data().to_vec(),
                digits: inst.digits.clone(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("dataset file is empty".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        let mut instances = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)?;
            let bad = |what: &str| Error::Format(format!("record {i}: {what} does not match the header"));
            if rec.set.len() != header.n || rec.set.iter().any(|row| row.len() != header.d) {
                return Err(bad("set shape"));
            }
            if rec.label.len() != header.l {
                return Err(bad("label length"));
            }
            if rec.digits.as_ref().is_some_and(|d| d.len() != header.n) {
                return Err(bad("digit list"));
            }
            instances.push(SetInstance {
                set: Tensor::new(vec![header.n, header.d], rec.set.concat())?,
                label: Tensor::vector(rec.label),
                digits: rec.digits,
            });
        }
        if instances.len() != header.count {
            return Err(Error::Format(format!(
                "header announces {} records, file has {}",
                header.count,
                instances.len()
            )));
        }
        Ok(Dataset { header, instances })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// Copy holding the instances at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let instances: Vec<SetInstance> = idx.iter().map(|&i| self.instances[i].clone()).collect();
        let mut header = self.header.clone();
        header.count = instances.len();
        header.origin = Some(idx.iter().map(|&i| self.origin_of(i)).collect());
        Dataset { header, instances }
    }

    /// Generation index of instance `i`.
    pub fn origin_of(&self, i: usize) -> usize {
        self.header.origin.as_ref().map_or(i, |o| o[i])
    }

    /// Seed-fixed shuffle, then the first `train` fraction, the next `val`
    /// fraction and the remainder.
    pub fn split(&self, seed: u64, train: f64, val: f64) -> (Dataset, Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng_for(seed, "split", 0));
        let n_train = (self.len() as f64 * train).round() as usize;
        let n_val = ((self.len() as f64 * val).round() as usize).min(self.len() - n_train);
        (
            self.subset(&idx[..n_train]),
            self.subset(&idx[n_train..n_train + n_val]),
            self.subset(&idx[n_train + n_val..]),
        )
    }

    /// Sets `[idx.len(), n, d]`.
    pub fn sets(&self, idx: &[usize]) -> Result<Tensor> {
        let (n, d) = (self.header.n, self.header.d);
        let mut data = Vec::with_capacity(idx.len() * n * d);
        for &i in idx {
            data.extend_from_slice(self.instances[i].set.data());
        }
        Tensor::new(vec![idx.len(), n, d], data)
    }

    /// Labels `[idx.len(), L]`.
    pub fn labels(&self, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * self.header.l);
        for &i in idx {
            data.extend_from_slice(self.instances[i].label.data());
        }
        Tensor::new(vec![idx.len(), self.header.l], data)
    }

    pub fn all_sets(&self) -> Vec<Tensor> {
        self.instances.iter().map(|i| i.set.clone()).collect()
    }

    pub fn all_labels(&self) -> Vec<Tensor> {
        self.instances.iter().map(|i| i.label.clone()).collect()
    }
}
