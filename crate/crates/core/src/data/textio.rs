//! Delimited-text persistence for datasets and the label oracle.
//!
//! A dataset is one CSV (`id,label,f0,f1,...` — the label column is absent
//! for unlabeled sets) plus a JSON sidecar (`<stem>.meta.json`) carrying the
//! feature shape, class count, and role. Floats print in shortest
//! round-trip form, so write/read is value-exact.

use crate::data::{Dataset, DomainRole, FeatureShape, LabelOracle};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    shape: FeatureShape,
    class_count: usize,
    role: DomainRole,
    labeled: bool,
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes `ds` as CSV plus its metadata sidecar.
pub fn write_dataset(ds: &Dataset, csv_path: &Path) -> Result<()> {
    ds.validate()?;
    let dim = ds.shape.len();
    let mut out = String::new();
    out.push_str("id");
    if ds.is_labeled() {
        out.push_str(",label");
    }
    for j in 0..dim {
        write!(out, ",f{j}").expect("string write");
    }
    out.push('\n');
    for (i, id) in ds.ids.iter().enumerate() {
        write!(out, "{id}").expect("string write");
        if let Some(ls) = &ds.labels {
            write!(out, ",{}", ls[i]).expect("string write");
        }
        for x in &ds.features[i] {
            write!(out, ",{x}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(csv_path, out)?;
    let meta = DatasetMeta {
        shape: ds.shape,
        class_count: ds.class_count,
        role: ds.role,
        labeled: ds.is_labeled(),
    };
    std::fs::write(sidecar_path(csv_path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]. Both the CSV and its
/// sidecar must exist.
pub fn read_dataset(csv_path: &Path) -> Result<Dataset> {
    if !csv_path.exists() {
        return Err(Error::MissingInput(csv_path.display().to_string()));
    }
    let side = sidecar_path(csv_path);
    if !side.exists() {
        return Err(Error::MissingInput(side.display().to_string()));
    }
    let meta: DatasetMeta = serde_json::from_slice(&std::fs::read(&side)?)?;
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Format {
        offset: 0,
        message: "empty dataset file".into(),
    })?;
    let expect_header = {
        let mut h = String::from("id");
        if meta.labeled {
            h.push_str(",label");
        }
        for j in 0..meta.shape.len() {
            write!(h, ",f{j}").expect("string write");
        }
        h
    };
    if header != expect_header {
        return Err(Error::Format {
            offset: 0,
            message: format!("unexpected header '{header}', expected '{expect_header}'"),
        });
    }

    let mut ids = Vec::new();
    let mut features = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut offset = header.len() as u64 + 1;
    for (lineno, line) in lines {
        if line.is_empty() {
            offset += 1;
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = |what: &str, tok: &str| Error::Format {
            offset,
            message: format!("line {}: bad {what} '{tok}'", lineno + 1),
        };
        let id_tok = fields.next().unwrap_or("");
        let id: u64 = id_tok.parse().map_err(|_| parse_err("id", id_tok))?;
        ids.push(id);
        if meta.labeled {
            let tok = fields.next().unwrap_or("");
            let label: usize = tok.parse().map_err(|_| parse_err("label", tok))?;
            labels.push(label);
        }
        let mut row = Vec::with_capacity(meta.shape.len());
        for tok in fields {
            let x: f64 = tok.parse().map_err(|_| parse_err("feature", tok))?;
            row.push(x);
        }
        if row.len() != meta.shape.len() {
            return Err(Error::Format {
                offset,
                message: format!(
                    "line {}: {} features, shape implies {}",
                    lineno + 1,
                    row.len(),
                    meta.shape.len()
                ),
            });
        }
        features.push(row);
        offset += line.len() as u64 + 1;
    }

    let ds = Dataset {
        ids,
        features,
        labels: if meta.labeled { Some(labels) } else { None },
        shape: meta.shape,
        class_count: meta.class_count,
        role: meta.role,
    };
    ds.validate()?;
    Ok(ds)
}

/// Persists the oracle (hidden labels plus its query log).
pub fn write_oracle(oracle: &LabelOracle, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(oracle)?)?;
    Ok(())
}

pub fn read_oracle(path: &Path) -> Result<LabelOracle> {
    if !path.exists() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
