use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Learner,
    Adversary,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Learner => "learner",
            Phase::Adversary => "adversary",
        }
    }
}

/// One optimizer step: its outer iteration, phase, index within that phase,
/// and the batch loss before the update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub outer_iter: usize,
    pub phase: Phase,
    pub step: usize,
    pub batch_loss: f64,
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("history csv: {e}"))
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}
