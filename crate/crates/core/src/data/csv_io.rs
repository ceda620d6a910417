//! CSV datasets: UTF-8, comma separated, one header row, decimal text.
//! Features are written in Rust's shortest round-trip `f64` form, so an
//! export followed by an import reproduces every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
}

impl CsvSchema {
    /// `x0..x{d-1}` plus `label`.
    pub fn default_for(dim: usize) -> Self {
        Self {
            feature_columns: (0..dim).map(|i| format!("x{i}")).collect(),
            label_column: "label".into(),
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledSet> {
    if schema.feature_columns.is_empty() {
        return Err(Error::Config("CSV schema declares no feature columns".into()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 0,
            message: format!("missing column {name:?}"),
        })
    };
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = find(&schema.label_column)?;

    let d = feature_idx.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |col: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column: col + 1,
            message,
        };
        for &col in &feature_idx {
            let field = record.get(col).unwrap_or("").trim();
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(col, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(col, format!("non-finite value {field:?}")));
            }
            data.push(v);
        }
        let field = record.get(label_idx).unwrap_or("").trim();
        let y: usize = field
            .parse()
            .map_err(|_| parse_err(label_idx, format!("not a class index: {field:?}")))?;
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    let n = labels.len();
    LabeledSet::new(Tensor::new(vec![n, d], data)?, labels, (0..n as u64).collect())
}

pub fn save_csv(set: &LabeledSet, path: &Path, schema: &CsvSchema) -> Result<()> {
    if schema.feature_columns.len() != set.dim() {
        return Err(Error::Config(format!(
            "schema has {} feature columns, set has {} features",
            schema.feature_columns.len(),
            set.dim()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = schema.feature_columns.clone();
    header.push(schema.label_column.clone());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..set.len() {
        let mut row: Vec<String> = set.features.row(i).iter().map(|v| v.to_string()).collect();
        row.push(set.labels[i].to_string());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// SHA-256 over shape (u64 LE) then data (f64 LE bits), hex encoded.
pub fn tensor_checksum(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for &d in t.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}
