use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::batch::{DatasetMeta, DatasetRole, EvalLabels, Generated, SourceBatch, TargetBatch};
use crate::error::{Error, Result};
use crate::util::fmt_f64;

const META: &str = "meta.json";
const X_FILE: &str = "x.csv";
const W_FILE: &str = "w.csv";
const LABELS: &str = "labels.csv";
const EVAL: &str = "eval.csv";

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn write_matrix(path: &Path, prefix: &str, m: &Array2<f64>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err)?;
    wtr.write_record((0..m.ncols()).map(|j| format!("{prefix}{j}")))
        .map_err(csv_err)?;
    for row in m.rows() {
        wtr.write_record(row.iter().map(|&v| fmt_f64(v))).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_ints(path: &Path, columns: &[(&str, &[usize])]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(csv_err)?;
    wtr.write_record(columns.iter().map(|(name, _)| *name)).map_err(csv_err)?;
    let n = columns.first().map_or(0, |(_, c)| c.len());
    for i in 0..n {
        wtr.write_record(columns.iter().map(|(_, c)| c[i].to_string()))
            .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn require(dir: &Path, file: &str) -> Result<std::path::PathBuf> {
    let p = dir.join(file);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Format(format!("{} is missing {file}", dir.display())))
    }
}

fn read_matrix(path: &Path, cols: usize, rows: usize) -> Result<Array2<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let width = rdr.headers().map_err(csv_err)?.len();
    if width != cols {
        return Err(Error::Format(format!(
            "{} has {width} columns, metadata says {cols}",
            path.display()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        for field in rec.iter() {
            data.push(field.parse::<f64>().map_err(|e| {
                Error::Format(format!("{}: bad number {field:?}: {e}", path.display()))
            })?);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Format(format!(
            "{} has {} values, expected {rows} x {cols}",
            path.display(),
            data.len()
        )));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

fn read_ints(path: &Path, rows: usize) -> Result<Vec<(String, Vec<usize>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let names: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut cols = vec![Vec::with_capacity(rows); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        for (col, field) in cols.iter_mut().zip(rec.iter()) {
            col.push(field.parse::<usize>().map_err(|e| {
                Error::Format(format!("{}: bad integer {field:?}: {e}", path.display()))
            })?);
        }
    }
    if cols.iter().any(|c| c.len() != rows) {
        return Err(Error::Format(format!("{} does not have {rows} rows", path.display())));
    }
    Ok(names.into_iter().zip(cols).collect())
}

fn take_column(cols: &mut Vec<(String, Vec<usize>)>, name: &str) -> Option<Vec<usize>> {
    let pos = cols.iter().position(|(n, _)| n == name)?;
    Some(cols.remove(pos).1)
}

fn read_meta(dir: &Path, role: DatasetRole) -> Result<DatasetMeta> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(require(dir, META)?)?)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.join(META).display())))?;
    if meta.format_version.split('.').next() != super::DATASET_FORMAT_VERSION.split('.').next() {
        return Err(Error::Format(format!("unsupported dataset version {}", meta.format_version)));
    }
    if meta.role != role {
        return Err(Error::Format(format!(
            "{} holds a {:?} dataset, expected {role:?}",
            dir.display(),
            meta.role
        )));
    }
    Ok(meta)
}

fn write_eval(dir: &Path, eval: &EvalLabels) -> Result<()> {
    let mut cols: Vec<(&str, &[usize])> = vec![("u_true", &eval.u_true)];
    if let Some(y) = &eval.y_true {
        cols.push(("y_true", y));
    }
    if let Some(x) = &eval.x_class {
        cols.push(("x_class", x));
    }
    if let Some(w) = &eval.w_class {
        cols.push(("w_class", w));
    }
    write_ints(&dir.join(EVAL), &cols)
}

/// Writes a generated source dataset: `meta.json`, `x.csv`, `w.csv`,
/// `labels.csv` (C, Y) and the evaluation-only `eval.csv`.
pub fn write_dataset(data: &Generated, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let src = &data.source;
    let mut meta = src.meta.clone();
    meta.data_hash = src.content_hash();
    fs::write(dir.join(META), serde_json::to_string_pretty(&meta)?)?;
    write_matrix(&dir.join(X_FILE), "x", &src.x)?;
    write_matrix(&dir.join(W_FILE), "w", &src.w)?;
    write_ints(&dir.join(LABELS), &[("c", &src.c), ("y", &src.y)])?;
    write_eval(dir, &data.eval)
}

/// Writes an unlabelled target dataset and its evaluation-only labels.
pub fn write_target(target: &TargetBatch, eval: &EvalLabels, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut meta = target.meta.clone();
    meta.data_hash = target.content_hash();
    fs::write(dir.join(META), serde_json::to_string_pretty(&meta)?)?;
    write_matrix(&dir.join(X_FILE), "x", &target.x)?;
    write_eval(dir, eval)
}

/// Reads the training-visible part of a source dataset. Never touches
/// `eval.csv`.
pub fn read_source(dir: impl AsRef<Path>) -> Result<SourceBatch> {
    let dir = dir.as_ref();
    let meta = read_meta(dir, DatasetRole::Source)?;
    let x = read_matrix(&require(dir, X_FILE)?, meta.d_x, meta.n)?;
    let w = read_matrix(&require(dir, W_FILE)?, meta.d_w, meta.n)?;
    let mut labels = read_ints(&require(dir, LABELS)?, meta.n)?;
    let c = take_column(&mut labels, "c").ok_or_else(|| Error::Format("labels.csv lacks c".into()))?;
    let y = take_column(&mut labels, "y").ok_or_else(|| Error::Format("labels.csv lacks y".into()))?;
    let batch = SourceBatch { x, w, c, y, meta };
    if batch.content_hash() != batch.meta.data_hash {
        return Err(Error::Integrity(format!("{} does not match its recorded hash", dir.display())));
    }
    batch.validate()?;
    Ok(batch)
}

/// Reads the covariates of a target dataset.
pub fn read_target(dir: impl AsRef<Path>) -> Result<TargetBatch> {
    let dir = dir.as_ref();
    let meta = read_meta(dir, DatasetRole::Target)?;
    let x = read_matrix(&require(dir, X_FILE)?, meta.d_x, meta.n)?;
    let batch = TargetBatch { x, meta };
    if batch.content_hash() != batch.meta.data_hash {
        return Err(Error::Integrity(format!("{} does not match its recorded hash", dir.display())));
    }
    Ok(batch)
}

/// Reads the evaluation-only labels of a dataset directory.
pub fn read_eval(dir: impl AsRef<Path>) -> Result<EvalLabels> {
    let dir = dir.as_ref();
    let path = require(dir, EVAL)?;
    let mut rdr = csv::Reader::from_path(&path).map_err(csv_err)?;
    let rows = rdr.records().count();
    let mut cols = read_ints(&path, rows)?;
    let u_true = take_column(&mut cols, "u_true")
        .ok_or_else(|| Error::Format("eval.csv lacks u_true".into()))?;
    Ok(EvalLabels {
        u_true,
        y_true: take_column(&mut cols, "y_true"),
        x_class: take_column(&mut cols, "x_class"),
        w_class: take_column(&mut cols, "w_class"),
    })
}
