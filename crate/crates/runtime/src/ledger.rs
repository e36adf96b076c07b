//! Per-cycle run records, persisted as CSV.
//!
//! Columns that only a validation cycle produces stay blank on cycles
//! without one. Files are rewritten whole through a temporary file and a
//! rename, so a reader never sees a half-written ledger.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xilrl_core::policy::write_atomic;

use crate::error::RuntimeError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LedgerRow {
    /// 0 for the validation of a loaded policy before any training.
    pub cycle: u32,
    /// Training reward per 1500 steps, averaged over the cycle.
    pub mean_train_reward: Option<f64>,
    /// Mean episode reward over the validation segments.
    pub validation_reward: Option<f64>,
    pub entropy: f64,
    pub kl: Option<f64>,
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
    /// Cumulative simulated seconds divided by the tier's speed-up factor.
    pub equivalent_time_s: f64,
    /// Grams over all validation segments.
    pub cumulative_nox: Option<f64>,
    pub cumulative_soot: Option<f64>,
    pub mean_abs_boost_error: Option<f64>,
    pub mean_abs_speed_error: Option<f64>,
    /// Failed episodes in this cycle, training and validation together.
    pub failure_count: u32,
    /// Training cycle recorded in the policy this row describes.
    pub policy_cycle: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLedger {
    pub rows: Vec<LedgerRow>,
}

impl RunLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows that carry a validation result.
    pub fn validations(&self) -> impl Iterator<Item = (&LedgerRow, f64)> {
        self.rows.iter().filter_map(|r| r.validation_reward.map(|v| (r, v)))
    }

    /// Highest validation reward, ties going to the earlier row.
    pub fn best_validation(&self) -> Option<&LedgerRow> {
        let mut best: Option<(&LedgerRow, f64)> = None;
        for (row, v) in self.validations() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((row, v));
            }
        }
        best.map(|(r, _)| r)
    }

    pub fn max_validation_reward(&self) -> Option<f64> {
        self.best_validation().and_then(|r| r.validation_reward)
    }

    pub fn max_train_reward(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.mean_train_reward).reduce(f64::max)
    }

    pub fn last_validation(&self) -> Option<&LedgerRow> {
        self.rows.iter().rev().find(|r| r.validation_reward.is_some())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(COLUMNS)?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<Result<Vec<LedgerRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RuntimeError> {
        let path = path.as_ref();
        let bytes = self.to_csv().map_err(|source| csv_error(path, source))?;
        write_atomic(path, &bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RuntimeError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file).map_err(|source| csv_error(path, source))
    }
}

pub const COLUMNS: [&str; 14] = [
    "cycle",
    "mean_train_reward",
    "validation_reward",
    "entropy",
    "kl",
    "policy_loss",
    "value_loss",
    "equivalent_time_s",
    "cumulative_nox",
    "cumulative_soot",
    "mean_abs_boost_error",
    "mean_abs_speed_error",
    "failure_count",
    "policy_cycle",
];

fn csv_error(path: &Path, source: csv::Error) -> RuntimeError {
    RuntimeError::Csv {
        path: path.display().to_string(),
        source,
    }
}
