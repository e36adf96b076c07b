//! Comparison tables and run summaries, computed from ledgers alone.

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::error::RuntimeError;
use crate::ledger::{LedgerRow, RunLedger};
use crate::master::convergence_cycles;

/// `(x - reference) / reference * 100`. NaN when the reference is zero
/// and `x` is not.
pub fn relative_percent(x: f64, reference: f64) -> f64 {
    if x == reference {
        0.0
    } else {
        (x - reference) / reference * 100.0
    }
}

/// One agent's line of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub agent: String,
    /// Training cycles already in the policy the run started from.
    pub source_cycles: u32,
    pub cycles_to_max: u32,
    pub equivalent_hours: f64,
    pub max_reward: f64,
    pub rel_nox_pct: f64,
    pub rel_soot_pct: f64,
    pub rel_boost_error_pct: f64,
    pub rel_speed_error_pct: f64,
    /// Columns in which this row is the best, `;`-separated.
    pub best: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

const FLAGGED: [&str; 7] = ["cycles_to_max", "equivalent_hours", "max_reward", "rel_nox_pct", "rel_soot_pct", "rel_boost_error_pct", "rel_speed_error_pct"];

impl ComparisonRow {
    fn flagged_value(&self, column: &str) -> f64 {
        match column {
            "cycles_to_max" => self.cycles_to_max as f64,
            "equivalent_hours" => self.equivalent_hours,
            // larger is better; negate so every column minimizes
            "max_reward" => -self.max_reward,
            "rel_nox_pct" => self.rel_nox_pct,
            "rel_soot_pct" => self.rel_soot_pct,
            "rel_boost_error_pct" => self.rel_boost_error_pct,
            "rel_speed_error_pct" => self.rel_speed_error_pct,
            _ => unreachable!("unknown column {column}"),
        }
    }

    fn is_best(&self, column: &str) -> bool {
        self.best.split(';').any(|c| c == column)
    }
}

fn validation_fields(row: &LedgerRow, what: &str) -> Result<[f64; 5], RuntimeError> {
    let missing = || RuntimeError::Report(format!("{what}: best row lacks validation metrics"));
    Ok([
        row.validation_reward.ok_or_else(missing)?,
        row.cumulative_nox.ok_or_else(missing)?,
        row.cumulative_soot.ok_or_else(missing)?,
        row.mean_abs_boost_error.ok_or_else(missing)?,
        row.mean_abs_speed_error.ok_or_else(missing)?,
    ])
}

/// Each ledger's best validation cycle against the baseline's validation
/// row. Every column except `source_cycles` flags its best value.
pub fn make_comparison_table(ledgers: &[(String, RunLedger)], baseline: &RunLedger) -> Result<ComparisonTable, RuntimeError> {
    if ledgers.is_empty() {
        return Err(RuntimeError::Report("no ledgers to compare".into()));
    }
    let base_row = baseline.best_validation().ok_or_else(|| RuntimeError::Report("baseline has no validation row".into()))?;
    let [_, b_nox, b_soot, b_boost, b_speed] = validation_fields(base_row, "baseline")?;

    let mut rows = Vec::with_capacity(ledgers.len());
    for (name, ledger) in ledgers {
        let best = ledger.best_validation().ok_or_else(|| RuntimeError::Report(format!("{name}: no validation rows")))?;
        let [reward, nox, soot, boost, speed] = validation_fields(best, name)?;
        let source_cycles = ledger.rows.first().filter(|r| r.cycle == 0).map_or(0, |r| r.policy_cycle);
        rows.push(ComparisonRow {
            agent: name.clone(),
            source_cycles,
            cycles_to_max: best.cycle,
            equivalent_hours: best.equivalent_time_s / 3600.0,
            max_reward: reward,
            rel_nox_pct: relative_percent(nox, b_nox),
            rel_soot_pct: relative_percent(soot, b_soot),
            rel_boost_error_pct: relative_percent(boost, b_boost),
            rel_speed_error_pct: relative_percent(speed, b_speed),
            best: String::new(),
        });
    }
    for column in FLAGGED {
        let best = rows.iter().map(|r| r.flagged_value(column)).filter(|v| !v.is_nan()).reduce(f64::min);
        if let Some(best) = best {
            for r in rows.iter_mut().filter(|r| r.flagged_value(column) == best) {
                if !r.best.is_empty() {
                    r.best.push(';');
                }
                r.best.push_str(column);
            }
        }
    }
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }
}

/// Fixed-width text with the best value of each column starred.
impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = ["agent", "src cycles", "cycles to max", "equiv. h", "max reward", "Rel. NOx %", "Rel. soot %", "Rel. |dp| %", "Rel. |dV| %"];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let star = |col: &str, text: String| if r.is_best(col) { format!("{text}*") } else { text };
            cells.push(vec![
                r.agent.clone(),
                r.source_cycles.to_string(),
                star("cycles_to_max", r.cycles_to_max.to_string()),
                star("equivalent_hours", format!("{:.3}", r.equivalent_hours)),
                star("max_reward", format!("{:.3}", r.max_reward)),
                star("rel_nox_pct", format!("{:+.2}", r.rel_nox_pct)),
                star("rel_soot_pct", format!("{:+.2}", r.rel_soot_pct)),
                star("rel_boost_error_pct", format!("{:+.2}", r.rel_boost_error_pct)),
                star("rel_speed_error_pct", format!("{:+.2}", r.rel_speed_error_pct)),
            ]);
        }
        let widths: Vec<usize> = (0..header.len()).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        for row in &cells {
            let mut line = String::new();
            for (c, cell) in row.iter().enumerate() {
                if c == 0 {
                    let _ = write!(line, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(line, "  {cell:>w$}", w = widths[c]);
                }
            }
            writeln!(f, "{}", line.trim_end())?;
        }
        Ok(())
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerSummary {
    pub name: String,
    pub cycles: usize,
    pub max_train_reward: Option<f64>,
    pub max_validation_reward: Option<f64>,
    pub best_cycle: Option<u32>,
    /// `None` when the run never converged.
    pub convergence_cycle: Option<u32>,
    pub first_entropy: Option<f64>,
    pub last_entropy: Option<f64>,
    pub failures: u32,
    pub equivalent_hours: f64,
}

pub fn summarize(name: &str, ledger: &RunLedger) -> LedgerSummary {
    LedgerSummary {
        name: name.to_string(),
        cycles: ledger.rows.iter().filter(|r| r.cycle > 0).count(),
        max_train_reward: ledger.max_train_reward(),
        max_validation_reward: ledger.max_validation_reward(),
        best_cycle: ledger.best_validation().map(|r| r.cycle),
        convergence_cycle: convergence_cycles(ledger),
        first_entropy: ledger.rows.first().map(|r| r.entropy),
        last_entropy: ledger.rows.last().map(|r| r.entropy),
        failures: ledger.rows.iter().map(|r| r.failure_count).sum(),
        equivalent_hours: ledger.rows.last().map_or(0.0, |r| r.equivalent_time_s / 3600.0),
    }
}

pub fn summaries_to_csv(summaries: &[LedgerSummary]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in summaries {
        w.serialize(s)?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}
