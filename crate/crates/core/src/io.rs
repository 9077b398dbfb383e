//! CSV ingestion, contrast parsing and atomic report/CSV output.
//!
//! Observations are read from `subject_id,t,y` and covariates from
//! `subject_id,x1,...,xq`; headers are required.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{EvaluationGrid, FunctionalDataset, Subject};
use crate::error::{FdaError, Result};
use crate::flm::DesignMatrix;
use crate::inference::TestReport;
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub min_points: usize,
    /// Drop subjects with fewer than `min_points` observations.
    pub drop_below_min: bool,
    /// Domain `[a, b]`; defaults to the observed time range.
    pub domain: Option<(f64, f64)>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            min_points: 1,
            drop_below_min: false,
            domain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestionReport {
    pub rows: usize,
    pub subjects_read: usize,
    pub subjects_kept: usize,
    /// Ids of subjects dropped by the minimum-count filter.
    pub dropped: Vec<String>,
}

fn parse_err(line: u64, message: impl Into<String>) -> FdaError {
    FdaError::ParseError {
        line,
        message: message.into(),
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
}

fn finite_field(record: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let raw = record
        .get(idx)
        .ok_or_else(|| parse_err(line, format!("missing field `{name}`")))?
        .trim();
    let v: f64 = raw
        .parse()
        .map_err(|_| parse_err(line, format!("`{name}` is not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("`{name}` is not finite: {raw:?}")));
    }
    Ok(v)
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn csv_error(e: csv::Error) -> FdaError {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => FdaError::Io(e.to_string()),
        _ => parse_err(line, e.to_string()),
    }
}

/// Reads long-format observations. Subjects are ordered by id and times
/// sorted within subject, so the row order of the input does not matter.
pub fn read_dataset<R: Read>(
    reader: R,
    options: &LoadOptions,
) -> Result<(FunctionalDataset, IngestionReport)> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let (ci, ct, cy) = (
        column(&headers, "subject_id")?,
        column(&headers, "t")?,
        column(&headers, "y")?,
    );
    let mut by_subject: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record);
        let id = record
            .get(ci)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(line, "missing subject_id"))?;
        let t = finite_field(&record, ct, "t", line)?;
        let y = finite_field(&record, cy, "y", line)?;
        by_subject.entry(id.to_string()).or_default().push((t, y));
        rows += 1;
    }
    if by_subject.is_empty() {
        return Err(FdaError::EmptyDataset);
    }
    let mut report = IngestionReport {
        rows,
        subjects_read: by_subject.len(),
        ..IngestionReport::default()
    };
    let mut subjects = Vec::with_capacity(by_subject.len());
    for (id, mut obs) in by_subject {
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(FdaError::DuplicateTimePoint {
                subject: id,
                t: w[0].0,
            });
        }
        if options.drop_below_min && obs.len() < options.min_points {
            report.dropped.push(id);
            continue;
        }
        let (times, values) = obs.into_iter().unzip();
        subjects.push(Subject::new(id, times, values));
    }
    if subjects.is_empty() {
        return Err(FdaError::EmptyAfterFilter);
    }
    report.subjects_kept = subjects.len();
    let domain = match options.domain {
        Some(d) => d,
        None => subjects
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.times[0]), hi.max(s.times[s.len() - 1]))
            }),
    };
    Ok((FunctionalDataset::new(subjects, domain)?, report))
}

pub fn load_dataset(path: &Path, options: &LoadOptions) -> Result<(FunctionalDataset, IngestionReport)> {
    read_dataset(File::open(path)?, options)
}

/// Reads `subject_id,x1,...,xq` and returns the rows in the order of
/// `subject_ids`. Rows for subjects not listed are ignored.
pub fn read_covariates<R: Read>(reader: R, subject_ids: &[String]) -> Result<DesignMatrix> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let ci = column(&headers, "subject_id")?;
    let cols: Vec<usize> = (0..headers.len()).filter(|&c| c != ci).collect();
    if cols.is_empty() {
        return Err(parse_err(1, "no covariate columns"));
    }
    let labels: Vec<String> = cols.iter().map(|&c| headers[c].to_string()).collect();
    let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record);
        let id = record.get(ci).unwrap_or_default().to_string();
        let x = cols
            .iter()
            .zip(&labels)
            .map(|(&c, name)| finite_field(&record, c, name, line))
            .collect::<Result<Vec<f64>>>()?;
        if rows.insert(id.clone(), x).is_some() {
            return Err(parse_err(
                line,
                format!("duplicate covariate row for subject {id}"),
            ));
        }
    }
    let q = labels.len();
    let mut data = Vec::with_capacity(subject_ids.len() * q);
    for id in subject_ids {
        let row = rows
            .get(id)
            .ok_or_else(|| FdaError::InvalidInput(format!("no covariates for subject {id}")))?;
        data.extend_from_slice(row);
    }
    DesignMatrix::new(Matrix::from_vec(subject_ids.len(), q, data)?, labels)
}

pub fn load_covariates(path: &Path, subject_ids: &[String]) -> Result<DesignMatrix> {
    read_covariates(File::open(path)?, subject_ids)
}

fn parse_rows(text: &str, sep: char) -> Result<Vec<Vec<f64>>> {
    text.split(sep)
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .enumerate()
        .map(|(i, row)| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| parse_err(i as u64 + 1, format!("not a number: {v:?}")))
                })
                .collect()
        })
        .collect()
}

/// A contrast matrix from a file of comma-separated rows, or inline with
/// rows separated by `;` (e.g. `1,-1,0;0,1,-1`).
pub fn parse_contrast(spec: &str) -> Result<Matrix> {
    let path = Path::new(spec);
    let rows = if path.is_file() {
        parse_rows(&std::fs::read_to_string(path)?, '\n')?
    } else {
        parse_rows(spec, ';')?
    };
    if rows.is_empty() {
        return Err(FdaError::InvalidInput("empty contrast".into()));
    }
    Matrix::from_rows(&rows)
}

/// `c(t)` on the grid: `None` is zero, an inline list is a constant vector,
/// a file `t,c1,...,ck` is interpolated linearly (held constant beyond its
/// end points).
pub fn parse_rhs(spec: Option<&str>, k: usize, grid: &EvaluationGrid) -> Result<Matrix> {
    let m = grid.len();
    let Some(spec) = spec else {
        return Ok(Matrix::zeros(k, m));
    };
    let path = Path::new(spec);
    if !path.is_file() {
        let rows = parse_rows(spec, ';')?;
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if values.len() != k {
            return Err(FdaError::InvalidInput(format!(
                "right-hand side has {} values for {k} contrasts",
                values.len()
            )));
        }
        return Ok(Matrix::from_fn(k, m, |l, _| values[l]));
    }
    let mut rdr = csv_reader(File::open(path)?);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.len() != k + 1 {
        return Err(parse_err(1, format!("expected t and {k} value columns")));
    }
    let mut knots: Vec<(f64, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record);
        let t = finite_field(&record, 0, "t", line)?;
        let c = (1..=k)
            .map(|l| finite_field(&record, l, &headers[l], line))
            .collect::<Result<Vec<f64>>>()?;
        knots.push((t, c));
    }
    if knots.is_empty() {
        return Err(FdaError::InvalidInput("right-hand side file has no rows".into()));
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Matrix::from_fn(k, m, |l, j| {
        interpolate(&knots, l, grid.points()[j])
    }))
}

fn interpolate(knots: &[(f64, Vec<f64>)], l: usize, t: f64) -> f64 {
    let idx = knots.partition_point(|k| k.0 <= t);
    if idx == 0 {
        return knots[0].1[l];
    }
    if idx == knots.len() {
        return knots[idx - 1].1[l];
    }
    let (t0, c0) = (&knots[idx - 1].0, &knots[idx - 1].1);
    let (t1, c1) = (&knots[idx].0, &knots[idx].1);
    c0[l] + (c1[l] - c0[l]) * (t - t0) / (t1 - t0)
}

/// Writes `bytes` to a temporary file next to `path` and renames it in place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| FdaError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_report(path: &Path, report: &TestReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| FdaError::Io(e.to_string()))?;
    write_atomic(path, json.as_bytes())
}

pub fn read_report(path: &Path) -> Result<TestReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.line() as u64, e.to_string()))
}

/// Serializes `rows` (with a header) to CSV in memory.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| FdaError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| FdaError::Io(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &to_csv(rows)?)
}

/// Wide table: a `t` column followed by one column per named function.
pub fn grid_table(grid: &EvaluationGrid, columns: &[(&str, &[f64])]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| FdaError::Io(e.to_string());
    let mut header = vec!["t".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(io)?;
    for (j, t) in grid.points().iter().enumerate() {
        let mut rec = vec![t.to_string()];
        for (name, vals) in columns {
            let v = vals
                .get(j)
                .ok_or_else(|| FdaError::GridMismatch(format!("column {name} is shorter than the grid")))?;
            rec.push(v.to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.into_inner().map_err(|e| FdaError::Io(e.to_string()))
}

/// Long table `s,t,value` of a matrix over the grid.
pub fn surface_table(grid: &EvaluationGrid, matrix: &Matrix) -> Result<Vec<u8>> {
    if matrix.rows() != grid.len() || matrix.cols() != grid.len() {
        return Err(FdaError::GridMismatch("surface does not match grid".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| FdaError::Io(e.to_string());
    w.write_record(["s", "t", "value"]).map_err(io)?;
    let p = grid.points();
    for j in 0..p.len() {
        for l in 0..p.len() {
            w.write_record([p[j].to_string(), p[l].to_string(), matrix[(j, l)].to_string()])
                .map_err(io)?;
        }
    }
    w.into_inner().map_err(|e| FdaError::Io(e.to_string()))
}

/// Long table `subject_id,t,value` of curves on a grid.
pub fn curves_table(grid: &EvaluationGrid, ids: &[String], curves: &Matrix) -> Result<Vec<u8>> {
    if curves.cols() != grid.len() || curves.rows() != ids.len() {
        return Err(FdaError::GridMismatch("curves do not match grid or ids".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| FdaError::Io(e.to_string());
    w.write_record(["subject_id", "t", "value"]).map_err(io)?;
    for (i, id) in ids.iter().enumerate() {
        for (j, t) in grid.points().iter().enumerate() {
            w.write_record([id.clone(), t.to_string(), curves[(i, j)].to_string()])
                .map_err(io)?;
        }
    }
    w.into_inner().map_err(|e| FdaError::Io(e.to_string()))
}

/// Long table `subject_id,t,y` of a dataset.
pub fn dataset_table(dataset: &FunctionalDataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| FdaError::Io(e.to_string());
    w.write_record(["subject_id", "t", "y"]).map_err(io)?;
    for s in dataset.subjects() {
        for (t, y) in s.times.iter().zip(&s.values) {
            w.write_record([s.id.clone(), t.to_string(), y.to_string()])
                .map_err(io)?;
        }
    }
    w.into_inner().map_err(|e| FdaError::Io(e.to_string()))
}
