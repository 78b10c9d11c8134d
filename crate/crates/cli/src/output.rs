//! Artifact emission. Every file is written to a temporary sibling and
//! renamed into place, so readers never see a partial artifact.
//!
//! CSV headers are frozen; money is in thousands of dollars and utility in
//! utils, both spelled out in the header names.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const CONTRACT_HEADER: [&str; 3] = ["y_thousand_usd", "wage_thousand_usd", "utility_utils"];
pub const ACTION_CURVE_HEADER: [&str; 2] = ["a", "expected_utility_utils"];
pub const FRONTIER_HEADER: [&str; 5] =
    ["reservation_utility_utils", "expected_wage_thousand_usd", "lambda", "mu", "ir_binding"];
pub const SWEEP_HEADER: [&str; 7] = [
    "reservation_utility_utils",
    "valid",
    "best_action",
    "max_gain_utils",
    "zero_pay_prob",
    "concave_everywhere",
    "max_u_aa",
];
pub const COMPARISON_HEADER: [&str; 5] =
    ["y_thousand_usd", "wage_active_thousand_usd", "wage_grid_thousand_usd", "density_a0", "stable"];

/// One row of `contract.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractRow {
    #[serde(rename = "y_thousand_usd")]
    pub y: f64,
    #[serde(rename = "wage_thousand_usd")]
    pub wage: f64,
    #[serde(rename = "utility_utils")]
    pub utility: f64,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes a CSV with the given header. Floats use the shortest
/// representation that round-trips.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: ToString,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(std::io::Error::other)?;
    for row in rows {
        let fields: Vec<String> = row.into_iter().map(|x| x.to_string()).collect();
        w.write_record(&fields).map_err(std::io::Error::other)?;
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("header {found:?} does not match {expected:?}")]
    Header { found: Vec<String>, expected: Vec<String> },
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

/// Reads a `contract.csv`, checking the frozen header.
pub fn read_contract_csv<R: std::io::Read>(reader: R) -> Result<Vec<ContractRow>, CsvError> {
    let mut r = csv::Reader::from_reader(reader);
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != CONTRACT_HEADER {
        return Err(CsvError::Header { found, expected: CONTRACT_HEADER.iter().map(|s| s.to_string()).collect() });
    }
    r.deserialize().map(|row| row.map_err(CsvError::from)).collect()
}
