//! Experiment records and their CSV / JSON serialization.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::fit::FitResult;
use crate::{Error, Result};

/// Fixed-column numeric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Mismatch(format!("no column {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// One named pass/fail criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, value: f64, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, value, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub tables: BTreeMap<String, Table>,
    pub fits: BTreeMap<String, FitResult>,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ExperimentRecord {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            experiment: config.experiment.name().to_string(),
            config: config.clone(),
            tables: BTreeMap::new(),
            fits: BTreeMap::new(),
            summary: BTreeMap::new(),
            checks: Vec::new(),
            passed: true,
        }
    }

    pub fn check(&mut self, check: Check) {
        self.passed &= check.passed;
        self.checks.push(check);
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.tables.get(name).ok_or_else(|| Error::Mismatch(format!("no table {name:?}")))
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Writes `<experiment>.json` (full record, including the resolved config)
/// and, for CSV output, one `<experiment>_<table>.csv` per table.
pub fn write_record(record: &ExperimentRecord, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json_path = dir.join(format!("{}.json", record.experiment));
    fs::write(&json_path, record.to_json_string()? + "\n")?;
    written.push(json_path);
    if format == OutputFormat::Csv {
        for (name, table) in &record.tables {
            let path = dir.join(format!("{}_{}.csv", record.experiment, name));
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            fs::write(&path, buf)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["h", "ratio"]);
        t.push(vec![0.25, 1.5]);
        t.push(vec![0.125, f64::NAN]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "h,ratio\n0.25,1.5\n0.125,NaN\n");
        assert_eq!(t.column("h").unwrap(), vec![0.25, 0.125]);
        assert!(t.column("x").is_err());
    }
}
