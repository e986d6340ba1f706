//! CSV matrices and vectors, and the JSON partition spec.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub row_counts: Vec<usize>,
}

fn csv_error(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse { line: pos.line() as usize, message: e.to_string() },
        None => Error::Io(e.to_string()),
    }
}

/// Non-blank records with their line numbers.
fn parse_rows(text: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| {
                let v: f64 = f.parse().map_err(|_| Error::Parse { line, message: format!("not a number: {f:?}") })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse { line, message: format!("non-finite value {f}") })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, row));
    }
    Ok(rows)
}

/// One matrix row per line, comma separated.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let rows = parse_rows(text)?;
    let n = rows.first().map_or(0, |(_, r)| r.len());
    if let Some((line, r)) = rows.iter().find(|(_, r)| r.len() != n) {
        return Err(Error::Parse { line: *line, message: format!("expected {n} columns, found {}", r.len()) });
    }
    Ok(DMatrix::from_row_iterator(rows.len(), n, rows.into_iter().flat_map(|(_, r)| r)))
}

/// One value per line (a single column) or a single row.
pub fn parse_vector_csv(text: &str) -> Result<DVector<f64>> {
    let rows = parse_rows(text)?;
    let values: Vec<f64> = match rows.as_slice() {
        [(_, single)] => single.clone(),
        _ => {
            if let Some((line, _)) = rows.iter().find(|(_, r)| r.len() != 1) {
                return Err(Error::Parse { line: *line, message: "expected one value per line".into() });
            }
            rows.into_iter().flat_map(|(_, r)| r).collect()
        }
    };
    Ok(DVector::from_vec(values))
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn vector_to_csv(v: &DVector<f64>) -> String {
    v.iter().map(|x| format!("{x}\n")).collect()
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix_csv(&std::fs::read_to_string(path)?)
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    parse_vector_csv(&std::fs::read_to_string(path)?)
}

pub fn read_partition_spec(path: &Path) -> Result<PartitionSpec> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    Ok(std::fs::write(path, matrix_to_csv(m))?)
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    Ok(std::fs::write(path, vector_to_csv(v))?)
}

pub fn write_partition_spec(path: &Path, spec: &PartitionSpec) -> Result<()> {
    let text = serde_json::to_string_pretty(spec).map_err(|e| Error::Io(e.to_string()))?;
    Ok(std::fs::write(path, text + "\n")?)
}
