//! CSV (dense) and LIBSVM (sparse) loaders and writers.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CsrMatrix, DenseMatrix, Features, ModelKind, TrainingDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Libsvm,
}

impl DataFormat {
    /// Guess from the file extension: `.csv` is CSV, anything else LIBSVM.
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Libsvm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub format: DataFormat,
    pub kind: ModelKind,
    /// CSV label column; `None` means the last column.
    pub label_column: Option<usize>,
    pub has_header: bool,
    /// LIBSVM feature count; `None` uses the largest index seen.
    pub features: Option<usize>,
    /// Dense: zero mean, unit variance per column. Sparse: unit variance
    /// only, so zeros stay zeros.
    pub standardize: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            format: DataFormat::Csv,
            kind: ModelKind::Linear,
            label_column: None,
            has_header: false,
            features: None,
            standardize: false,
        }
    }
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<TrainingDataset> {
    let file = std::fs::File::open(path)?;
    ingest_reader(std::io::BufReader::new(file), opts)
}

pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<TrainingDataset> {
    let (features, raw) = match opts.format {
        DataFormat::Csv => read_csv(reader, opts)?,
        DataFormat::Libsvm => read_libsvm(reader, opts)?,
    };
    let labels = encode_labels(&raw, opts.kind)?;
    let features = if opts.standardize { standardize(features) } else { features };
    TrainingDataset::new(features, labels, opts.kind)
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse {
            line,
            msg: format!("not a number: {s:?}"),
        })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite value {s:?}"),
        });
    }
    Ok(v)
}

fn read_csv<R: Read>(reader: R, opts: &IngestOptions) -> Result<(Features, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut cols = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let width = rec.len();
        if width < 2 {
            return Err(Error::Parse {
                line,
                msg: "need at least one feature and a label".into(),
            });
        }
        let label_col = opts.label_column.unwrap_or(width - 1);
        if label_col >= width {
            return Err(Error::Parse {
                line,
                msg: format!("label column {label_col} missing"),
            });
        }
        for (k, field) in rec.iter().enumerate() {
            let v = parse_f64(field, line)?;
            if k == label_col {
                labels.push(v);
            } else {
                data.push(v);
            }
        }
        cols.get_or_insert(width - 1);
    }
    let cols = cols.ok_or_else(|| Error::data("CSV file has no rows"))?;
    let n = labels.len();
    Ok((Features::Dense(DenseMatrix::new(n, cols, data)?), labels))
}

fn read_libsvm<R: Read>(mut reader: R, opts: &IngestOptions) -> Result<(Features, Vec<f64>)> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_col = 0usize;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        labels.push(parse_f64(parts.next().unwrap_or(""), line)?);
        let mut row = Vec::new();
        for item in parts {
            let (idx, val) = item.split_once(':').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected index:value, got {item:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad feature index {idx:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line,
                    msg: "feature indices start at 1".into(),
                });
            }
            max_col = max_col.max(idx);
            let v = parse_f64(val, line)?;
            if v != 0.0 {
                row.push(((idx - 1) as u32, v));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::data("LIBSVM file has no rows"));
    }
    let cols = match opts.features {
        Some(m) if m < max_col => return Err(Error::data(format!("feature index {max_col} exceeds {m} features"))),
        Some(m) => m,
        None => max_col,
    };
    Ok((Features::Sparse(CsrMatrix::from_row_entries(cols, &rows)?), labels))
}

/// Binary labels: `{-1, +1}` kept, `{0, 1}` remapped to `{-1, +1}`.
/// Multinomial labels must be class indices.
fn encode_labels(raw: &[f64], kind: ModelKind) -> Result<Vec<f64>> {
    let distinct: BTreeSet<u64> = raw.iter().map(|v| v.to_bits()).collect();
    match kind {
        ModelKind::Linear => Ok(raw.to_vec()),
        ModelKind::BinaryLogistic => {
            if distinct.len() > 2 {
                return Err(Error::data(format!(
                    "binary model but the labels take {} distinct values",
                    distinct.len()
                )));
            }
            if raw.iter().all(|&y| y == 1.0 || y == -1.0) {
                Ok(raw.to_vec())
            } else if raw.iter().all(|&y| y == 0.0 || y == 1.0) {
                Ok(raw.iter().map(|&y| if y == 1.0 { 1.0 } else { -1.0 }).collect())
            } else {
                Err(Error::data("binary labels must be +1/-1 or 0/1"))
            }
        }
        ModelKind::MultinomialLogistic { classes } => {
            if distinct.len() > classes {
                return Err(Error::data(format!(
                    "{classes}-class model but the labels take {} distinct values",
                    distinct.len()
                )));
            }
            Ok(raw.to_vec())
        }
    }
}

fn standardize(features: Features) -> Features {
    match features {
        Features::Dense(d) => {
            let (n, m) = (d.rows(), d.cols());
            let mut data = d.as_slice().to_vec();
            for c in 0..m {
                let mean = (0..n).map(|r| data[r * m + c]).sum::<f64>() / n as f64;
                let var = (0..n).map(|r| (data[r * m + c] - mean).powi(2)).sum::<f64>() / n as f64;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                for r in 0..n {
                    data[r * m + c] = (data[r * m + c] - mean) / sd;
                }
            }
            Features::Dense(DenseMatrix::new(n, m, data).expect("same shape"))
        }
        Features::Sparse(s) => {
            let n = s.rows();
            let m = s.cols();
            let mut sq = vec![0.0; m];
            for r in 0..n {
                let (idx, val) = s.row(r);
                for (&c, &v) in idx.iter().zip(val) {
                    sq[c as usize] += v * v;
                }
            }
            let scale: Vec<f64> = sq
                .iter()
                .map(|&q| if q > 0.0 { 1.0 / (q / n as f64).sqrt() } else { 1.0 })
                .collect();
            let rows: Vec<Vec<(u32, f64)>> = (0..n)
                .map(|r| {
                    let (idx, val) = s.row(r);
                    idx.iter().zip(val).map(|(&c, &v)| (c, v * scale[c as usize])).collect()
                })
                .collect();
            Features::Sparse(CsrMatrix::from_row_entries(m, &rows).expect("same shape"))
        }
    }
}

/// Dense CSV with the label in the last column.
pub fn write_csv<W: Write>(ds: &TrainingDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.features().row_dense(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.label(i).to_string());
        w.write_record(&rec).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// LIBSVM with 1-based indices; zeros are omitted.
pub fn write_libsvm<W: Write>(ds: &TrainingDataset, mut out: W) -> Result<()> {
    for i in 0..ds.n() {
        let mut line = ds.label(i).to_string();
        match ds.features() {
            Features::Sparse(s) => {
                let (idx, val) = s.row(i);
                for (&c, &v) in idx.iter().zip(val) {
                    line.push_str(&format!(" {}:{}", c + 1, v));
                }
            }
            Features::Dense(d) => {
                for (c, &v) in d.row(i).iter().enumerate() {
                    if v != 0.0 {
                        line.push_str(&format!(" {}:{}", c + 1, v));
                    }
                }
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
