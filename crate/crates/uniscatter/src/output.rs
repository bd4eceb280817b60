//! CSV and JSON writers. Reals are printed with 9 significant digits so that
//! single-threaded reruns give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::CliError;

pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

/// Rows of pre-formatted cells under a fixed header.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_csv(dir: &Path, name: &str, table: &Table) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io { path: path.clone(), source: e.into() })?;
    let wrap = |e: csv::Error| CliError::Io { path: path.clone(), source: e.into() };
    w.write_record(&table.header).map_err(wrap)?;
    for row in &table.rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

pub fn write_json(dir: &Path, name: &str, value: &Value) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}
