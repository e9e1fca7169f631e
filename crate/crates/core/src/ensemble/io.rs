//! CSV exchange for ensemble inputs, joined on `sample_id`.
//!
//! Candidate files: `sample_id,c1,...,ck`. Labels: `sample_id,label`.
//! Weights: `sample_id,weight`. Features: `sample_id,x1,...,xd`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::{EnsembleProblem, Labels, Predictions};
use crate::error::{Error, Result};
use crate::points::Points;
use crate::solver::{predict_ratios, RatioModel};

/// Rows of one file keyed by `sample_id`, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct IdTable {
    pub file: String,
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_error(file: &str, row: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        reason: reason.into(),
    }
}

impl IdTable {
    /// Rows reordered to follow `order`; ids absent on either side are errors.
    fn aligned(&self, order: &IdTable) -> Result<Vec<&[f64]>> {
        let mut index: HashMap<&str, usize> = HashMap::with_capacity(self.ids.len());
        for (i, id) in self.ids.iter().enumerate() {
            index.insert(id, i);
        }
        let mut out = Vec::with_capacity(order.ids.len());
        for (row, id) in order.ids.iter().enumerate() {
            match index.remove(id.as_str()) {
                Some(i) => out.push(self.rows[i].as_slice()),
                None => {
                    return Err(parse_error(
                        &order.file,
                        row + 1,
                        format!("sample_id {id:?} has no match in {}", self.file),
                    ))
                }
            }
        }
        if let Some(i) = index.values().copied().min() {
            return Err(parse_error(
                &self.file,
                i + 1,
                format!("sample_id {:?} has no match in {}", self.ids[i], order.file),
            ));
        }
        Ok(out)
    }
}

/// Reads `sample_id` followed by numeric columns. `expect` pins the value
/// column names when given.
fn read_table(path: &Path, expect: Option<&[&str]>) -> Result<IdTable> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_error(&file, 0, e.to_string()))?;
    let header = reader.headers().map_err(|e| parse_error(&file, 0, e.to_string()))?.clone();
    let columns: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if columns.first().map(String::as_str) != Some("sample_id") {
        return Err(parse_error(&file, 0, "missing column sample_id"));
    }
    if columns.len() < 2 {
        return Err(parse_error(&file, 0, "missing value columns"));
    }
    if let Some(names) = expect {
        for name in names {
            if !columns[1..].iter().any(|c| c == name) {
                return Err(parse_error(&file, 0, format!("missing column {name}")));
            }
        }
        if columns.len() - 1 != names.len() {
            return Err(parse_error(&file, 0, format!("expected columns sample_id,{}", names.join(","))));
        }
    }
    let width = columns.len();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_error(&file, row, e.to_string()))?;
        if rec.len() != width {
            return Err(parse_error(
                &file,
                row,
                format!("shape mismatch: expected {width} fields, found {}", rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(parse_error(&file, row, "empty sample_id"));
        }
        if let Some(prev) = seen.insert(id.clone(), row) {
            return Err(parse_error(&file, row, format!("duplicate sample_id {id:?} (first at row {prev})")));
        }
        let mut values = Vec::with_capacity(width - 1);
        for (col, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_error(&file, row, format!("column {}: not a number: {cell:?}", columns[col])))?;
            if v.is_nan() {
                return Err(parse_error(&file, row, format!("column {}: NaN cell", columns[col])));
            }
            if !v.is_finite() {
                return Err(parse_error(&file, row, format!("column {}: non-finite cell", columns[col])));
            }
            values.push(v);
        }
        ids.push(id);
        rows.push(values);
    }
    if ids.is_empty() {
        return Err(parse_error(&file, 0, "no data rows"));
    }
    Ok(IdTable { file, columns, ids, rows })
}

pub fn read_candidate_file(path: &Path) -> Result<IdTable> {
    let t = read_table(path, None)?;
    for (j, c) in t.columns[1..].iter().enumerate() {
        if *c != format!("c{}", j + 1) {
            return Err(parse_error(&t.file, 0, format!("candidate columns must be c1..ck, found {c:?}")));
        }
    }
    Ok(t)
}

pub fn read_labels_file(path: &Path) -> Result<IdTable> {
    read_table(path, Some(&["label"]))
}

/// Weight files reject negative entries with the offending row.
pub fn read_weights_file(path: &Path) -> Result<IdTable> {
    let t = read_table(path, Some(&["weight"]))?;
    if let Some(i) = t.rows.iter().position(|r| r[0] < 0.0) {
        return Err(parse_error(&t.file, i + 1, format!("negative weight {}", t.rows[i][0])));
    }
    Ok(t)
}

pub fn read_features_file(path: &Path) -> Result<IdTable> {
    let t = read_table(path, None)?;
    for (j, c) in t.columns[1..].iter().enumerate() {
        if *c != format!("x{}", j + 1) {
            return Err(parse_error(&t.file, 0, format!("feature columns must be x1..xd, found {c:?}")));
        }
    }
    Ok(t)
}

#[derive(Debug, Clone)]
pub enum WeightSource {
    File(PathBuf),
    /// Ratio model evaluated on a features file.
    Model { model: Box<RatioModel>, features: PathBuf },
}

#[derive(Debug, Clone)]
pub struct CandidateFiles {
    pub candidates: Vec<PathBuf>,
    pub labels: PathBuf,
}

fn labels_from(table: &IdTable, n_classes: usize) -> Result<Labels> {
    let values: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    if n_classes == 1 {
        return Ok(Labels::Binary(values));
    }
    let mut classes = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        if v.fract() != 0.0 || *v < 0.0 || *v >= n_classes as f64 {
            return Err(parse_error(
                &table.file,
                i + 1,
                format!("label {v} is not a class index below {n_classes}"),
            ));
        }
        classes.push(*v as usize);
    }
    Ok(Labels::Classes(classes))
}

/// Candidate predictions and labels joined in labels-file order.
pub fn read_predictions(files: &CandidateFiles) -> Result<(Vec<String>, Predictions, Labels)> {
    if files.candidates.is_empty() {
        return Err(crate::error::invalid("need at least one candidate file"));
    }
    let labels = read_labels_file(&files.labels)?;
    let tables = files
        .candidates
        .iter()
        .map(|p| read_candidate_file(p))
        .collect::<Result<Vec<_>>>()?;
    let k = tables[0].columns.len() - 1;
    let mut blocks = Vec::with_capacity(tables.len());
    for t in &tables {
        if t.columns.len() - 1 != k {
            return Err(parse_error(
                &t.file,
                0,
                format!("shape mismatch: {} class columns, first candidate has {k}", t.columns.len() - 1),
            ));
        }
        let rows = t.aligned(&labels)?;
        blocks.push(DMatrix::from_fn(rows.len(), k, |j, c| rows[j][c]));
    }
    let preds = Predictions::from_blocks(&blocks)?;
    let y = labels_from(&labels, k)?;
    Ok((labels.ids.clone(), preds, y))
}

/// Source-side problem with importance weights from a file or a ratio model.
pub fn ingest_candidates(files: &CandidateFiles, weights: &WeightSource) -> Result<(Vec<String>, EnsembleProblem)> {
    let (ids, preds, y) = read_predictions(files)?;
    let order = IdTable {
        file: files.labels.display().to_string(),
        columns: vec![],
        ids: ids.clone(),
        rows: vec![],
    };
    let w: Vec<f64> = match weights {
        WeightSource::File(path) => read_weights_file(path)?.aligned(&order)?.iter().map(|r| r[0]).collect(),
        WeightSource::Model { model, features } => {
            let table = read_features_file(features)?;
            let rows = table.aligned(&order)?;
            let d = table.columns.len() - 1;
            let pts = Points::new(d, rows.iter().flat_map(|r| r.iter().copied()).collect())?;
            predict_ratios(model, &pts)?
        }
    };
    Ok((ids, EnsembleProblem::new(preds, y, w)?))
}

fn write_rows(path: &Path, header: Vec<String>, ids: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one `n x k` candidate block.
pub fn write_candidate_file(path: &Path, ids: &[String], block: &DMatrix<f64>) -> Result<()> {
    let mut header = vec!["sample_id".to_string()];
    header.extend((1..=block.ncols()).map(|c| format!("c{c}")));
    write_rows(path, header, ids, (0..block.nrows()).map(|j| block.row(j).iter().copied().collect()))
}

pub fn write_labels_file(path: &Path, ids: &[String], labels: &Labels) -> Result<()> {
    let values: Vec<f64> = match labels {
        Labels::Binary(v) => v.clone(),
        Labels::Classes(v) => v.iter().map(|&c| c as f64).collect(),
    };
    write_rows(path, vec!["sample_id".into(), "label".into()], ids, values.into_iter().map(|v| vec![v]))
}

pub fn write_weights_file(path: &Path, ids: &[String], weights: &[f64]) -> Result<()> {
    write_rows(path, vec!["sample_id".into(), "weight".into()], ids, weights.iter().map(|&v| vec![v]))
}
