use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of `results.csv`. Per-run rows carry `std = 0`; aggregated rows
/// carry the spread across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    pub model: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub metric: String,
    pub value: f64,
    pub std: f64,
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("results csv: {e}"))
}

pub fn write_results(path: &Path, rows: &[MetricRow]) -> Result<()> {
    if let Some(bad) = rows.iter().find(|r| !r.value.is_finite() || !(r.std >= 0.0)) {
        return Err(Error::NonFinite(format!("metric {} of {}", bad.metric, bad.model)));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

/// Mean and population standard deviation over runs of every
/// `(task, model, n, d, metric)`; the row keeps the smallest run seed.
pub fn aggregate(rows: &[MetricRow]) -> Vec<MetricRow> {
    let mut groups: BTreeMap<(String, String, usize, usize, String), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.task.clone(), r.model.clone(), r.n, r.d, r.metric.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((task, model, n, d, metric), runs)| {
            let m = runs.len() as f64;
            let mean = runs.iter().map(|r| r.value).sum::<f64>() / m;
            let var = runs.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / m;
            MetricRow {
                task,
                model,
                seed: runs.iter().map(|r| r.seed).min().unwrap_or(0),
                n,
                d,
                metric,
                value: mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

/// Whitespace-separated table: a `#` header naming the columns, then one
/// line per x value with one y column per series.
pub fn write_plot_data(path: &Path, x_name: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> Result<()> {
    if let Some((name, _)) = series.iter().find(|(_, ys)| ys.len() != xs.len()) {
        return Err(Error::invalid(format!("series {name} does not match the x column")));
    }
    let mut out = format!("# {x_name}");
    for (name, _) in series {
        write!(out, " {}", name.replace(char::is_whitespace, "_")).expect("string write");
    }
    out.push('\n');
    for (i, x) in xs.iter().enumerate() {
        write!(out, "{x}").expect("string write");
        for (_, ys) in series {
            write!(out, " {}", ys[i]).expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
