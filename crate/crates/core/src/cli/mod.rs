//! The `mwk` scenario runner: TOML in, CSV tables plus a JSON manifest out.

pub mod run;
pub mod scenario;
pub mod selftest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Error;

pub use run::run_scenario;
pub use scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("numerical guard: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("self-test failed: {0}")]
    SelfTest(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
            CliError::SelfTest(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Dimension(_)
            | Error::NotHermitian(_)
            | Error::InvalidState(_)
            | Error::InvalidArgument(_)
            | Error::InvalidPattern(_) => CliError::Schema(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// One table cell. Numbers print in Rust's shortest round-trip form,
/// switching to exponent notation outside `[1e-4, 1e15)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Num(x) => {
                let a = x.abs();
                if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
                    format!("{x}")
                } else {
                    format!("{x:e}")
                }
            }
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn cmp_key(&self, other: &Cell) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (Cell::Num(a), Cell::Num(b)) => a.total_cmp(b),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Empty, Cell::Empty) => Ordering::Equal,
            (Cell::Empty, _) => Ordering::Less,
            (_, Cell::Empty) => Ordering::Greater,
            (Cell::Num(_), Cell::Text(_)) => Ordering::Less,
            (Cell::Text(_), Cell::Num(_)) => Ordering::Greater,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

/// A result table. Rows are sorted on the first `keys` columns before writing.
#[derive(Clone, Debug)]
pub struct Table {
    pub columns: Vec<String>,
    pub keys: usize,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str], keys: usize) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), keys, rows: Vec::new() }
    }

    pub fn sort(&mut self) {
        let k = self.keys;
        self.rows.sort_by(|x, y| {
            x[..k].iter().zip(&y[..k]).map(|(a, b)| a.cmp_key(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns).map_err(|e| CliError::Io(e.to_string()))?;
        for row in &self.rows {
            debug_assert_eq!(row.len(), self.columns.len());
            w.write_record(row.iter().map(Cell::render)).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub columns: Vec<String>,
    pub rows: usize,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub kind: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub numerics: scenario::Numerics,
    pub outputs: Vec<OutputEntry>,
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Result of a scenario run, before it touches the filesystem.
#[derive(Debug)]
pub struct RunOutput {
    pub name: String,
    pub table: Table,
    pub tolerances: BTreeMap<String, f64>,
}

/// Writes `<name>.csv` and `<name>.manifest.json` into `out`; returns both paths.
pub fn write_outputs(
    out: &Path,
    scenario: &Scenario,
    config_bytes: &[u8],
    mut result: RunOutput,
) -> Result<(PathBuf, PathBuf), CliError> {
    std::fs::create_dir_all(out)?;
    result.table.sort();
    let csv_name = format!("{}.csv", result.name);
    let csv_path = out.join(&csv_name);
    std::fs::write(&csv_path, result.table.to_csv()?)?;
    let manifest = Manifest {
        tool: "mwk",
        version: env!("CARGO_PKG_VERSION"),
        kind: scenario.kind.name(),
        config_sha256: config_hash(config_bytes),
        seed: scenario.seed,
        tolerances: result.tolerances,
        numerics: scenario.numerics.clone(),
        outputs: vec![OutputEntry { file: csv_name, columns: result.table.columns.clone(), rows: result.table.rows.len() }],
    };
    let json_path = out.join(format!("{}.manifest.json", result.name));
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(&json_path, text)?;
    Ok((csv_path, json_path))
}
