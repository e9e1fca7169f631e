use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::points::{LabeledSample, Points};

/// Sidecar describing a generated dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetManifest<P: Serialize> {
    pub generator: String,
    pub seed: u64,
    pub parameters: P,
    pub exact_ratio_available: bool,
    pub files: Vec<String>,
}

/// `label,x1,...,xd` with numerator rows (`1`) before denominator rows (`-1`).
pub fn write_dataset_csv(path: &Path, sample: &LabeledSample) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = sample.dim();
    let mut header = vec!["label".to_string()];
    header.extend((1..=d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (label, pts) in [("1", &sample.numerator), ("-1", &sample.denominator)] {
        for row in pts.rows() {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Inverse of [`write_dataset_csv`]; labels may be `1`/`+1` or `-1`.
pub fn read_dataset_csv(path: &Path) -> Result<LabeledSample> {
    let file = path.display().to_string();
    let parse_err = |row: usize, reason: String| Error::Parse {
        file: file.clone(),
        row,
        reason,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(parse_err(0, "header must be label,x1,...,xd".into()));
    }
    let d = header.len() - 1;
    let (mut xp, mut xq) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.len() != d + 1 {
            return Err(parse_err(row, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        let dest = match rec[0].trim() {
            "1" | "+1" => &mut xp,
            "-1" => &mut xq,
            other => return Err(parse_err(row, format!("label must be 1 or -1, got {other:?}"))),
        };
        for cell in rec.iter().skip(1) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(row, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("non-finite value {cell:?}")));
            }
            dest.push(v);
        }
    }
    LabeledSample::new(Points::new(d, xp)?, Points::new(d, xq)?)
}
