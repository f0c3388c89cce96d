//! File formats: CSV for matrices, JSON for configuration and summaries.
//!
//! Matrices are written as headered CSV, one row per observation. Floats
//! use the shortest decimal representation that parses back to the same
//! 64-bit value, so a write/read round trip is exact. Datasets live in a
//! directory with per-study files `X_s.csv` (counts), `Z_s.csv`
//! (covariates), and `a_s.csv` (normalizers, optional — missing means
//! a ≡ 1), with study indices starting at 1; simulated ground truth goes to
//! a `truth/` subdirectory alongside them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{MultiStudyDataset, StudyData};
use crate::error::{Error, Result};
use crate::simgen::SimTruth;

/// Provenance record written next to every command's outputs: enough to
/// reproduce the run bit-for-bit in single-threaded mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Which command produced the outputs.
    pub command: String,
    /// Crate version that ran.
    pub version: String,
    /// Fully resolved configuration, after defaults and overrides.
    pub config: serde_json::Value,
    /// Every seed that influenced the outputs.
    pub seeds: Vec<u64>,
    /// Input paths consumed.
    pub inputs: Vec<String>,
    /// Output paths produced.
    pub outputs: Vec<String>,
    /// Wall-clock timings by phase, in seconds.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Fresh manifest for `command` at the current crate version.
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    if source.is_io_error() {
        match source.into_kind() {
            csv::ErrorKind::Io(io) => io_error(path, io),
            _ => unreachable!("is_io_error guarantees an I/O kind"),
        }
    } else {
        Error::Parse {
            path: path.display().to_string(),
            message: source.to_string(),
        }
    }
}

fn parse_error(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message,
    }
}

/// Writes a float matrix as CSV with columns `{prefix}1..{prefix}k`.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes an integer count matrix as CSV with columns `v1..vp`.
pub fn write_counts_csv(path: &Path, m: &DMatrix<i64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("v{j}")).collect();
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn read_rows<T>(path: &Path, parse: impl Fn(&str) -> Option<T>) -> Result<(usize, Vec<T>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let cols = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .len();
    let mut flat = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != cols {
            return Err(parse_error(
                path,
                format!("row {} has {} fields, expected {cols}", i + 2, record.len()),
            ));
        }
        for field in record.iter() {
            flat.push(parse(field.trim()).ok_or_else(|| {
                parse_error(path, format!("row {}: invalid value {field:?}", i + 2))
            })?);
        }
    }
    Ok((cols, flat))
}

/// Reads a float matrix written by [`write_matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (cols, flat) = read_rows(path, |s| s.parse::<f64>().ok())?;
    let rows = if cols == 0 { 0 } else { flat.len() / cols };
    Ok(DMatrix::from_row_slice(rows, cols, &flat))
}

/// Reads an integer count matrix written by [`write_counts_csv`].
pub fn read_counts_csv(path: &Path) -> Result<DMatrix<i64>> {
    let (cols, flat) = read_rows(path, |s| s.parse::<i64>().ok())?;
    let rows = if cols == 0 { 0 } else { flat.len() / cols };
    Ok(DMatrix::from_row_slice(rows, cols, &flat))
}

/// Writes a vector as a single-column CSV.
pub fn write_vector_csv(path: &Path, v: &DVector<f64>, name: &str) -> Result<()> {
    write_matrix_csv(path, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()), name)
}

/// Reads a single-column CSV as a vector.
pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(parse_error(
            path,
            format!("expected a single column, found {}", m.ncols()),
        ));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

/// Serializes a value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| parse_error(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

/// Deserializes a JSON file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e.to_string()))
}

/// Creates `dir` (and parents) if missing.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn study_file(dir: &Path, stem: &str, study_index: usize) -> PathBuf {
    dir.join(format!("{stem}_{study_index}.csv"))
}

/// Writes a dataset in the per-study layout; returns the files written.
pub fn write_dataset(dir: &Path, data: &MultiStudyDataset) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for s in 0..data.n_studies() {
        let study = data.study(s);
        let x_path = study_file(dir, "X", s + 1);
        write_counts_csv(&x_path, study.x())?;
        let z_path = study_file(dir, "Z", s + 1);
        write_matrix_csv(&z_path, study.z(), "z")?;
        let a_path = study_file(dir, "a", s + 1);
        write_vector_csv(&a_path, study.a(), "a")?;
        written.extend([x_path, z_path, a_path]);
    }
    Ok(written)
}

/// Reads a dataset from the per-study layout, discovering studies by the
/// presence of `X_1.csv`, `X_2.csv`, …; a missing `a_s.csv` defaults to
/// all-ones normalizers.
pub fn read_dataset(dir: &Path) -> Result<MultiStudyDataset> {
    let mut studies = Vec::new();
    for s in 1.. {
        let x_path = study_file(dir, "X", s);
        if !x_path.exists() {
            break;
        }
        let x = read_counts_csv(&x_path)?;
        let z = read_matrix_csv(&study_file(dir, "Z", s))?;
        let a_path = study_file(dir, "a", s);
        let a = if a_path.exists() {
            read_vector_csv(&a_path)?
        } else {
            DVector::from_element(x.nrows(), 1.0)
        };
        studies.push(StudyData::new(x, z, a)?);
    }
    if studies.is_empty() {
        return Err(parse_error(
            &dir.join("X_1.csv"),
            "no study files found (expected X_1.csv, X_2.csv, ...)".to_string(),
        ));
    }
    MultiStudyDataset::new(studies)
}

/// Writes the ELBO trace as `(iteration, elbo)` rows; iteration 0 is the
/// initialization value and the last row is the post-refresh value.
pub fn write_elbo_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["iteration", "elbo"])
        .map_err(|e| csv_error(path, e))?;
    for (i, value) in trace.iter().enumerate() {
        w.write_record([i.to_string(), value.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes benchmark replicate records, one metric value per row.
pub fn write_benchmark_results_csv(
    path: &Path,
    results: &[crate::bench::ReplicateRecord],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["scenario", "cell", "replicate", "metric", "value"])
        .map_err(|e| csv_error(path, e))?;
    for r in results {
        w.write_record([
            r.scenario.as_str(),
            r.cell.as_str(),
            &r.replicate.to_string(),
            r.metric.as_str(),
            &r.value.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes benchmark cell summaries; the SD field is empty when a cell has a
/// single replicate.
pub fn write_benchmark_summary_csv(
    path: &Path,
    summaries: &[crate::bench::CellSummary],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["scenario", "cell", "metric", "mean", "sd", "replicates"])
        .map_err(|e| csv_error(path, e))?;
    for s in summaries {
        w.write_record([
            s.scenario.as_str(),
            s.cell.as_str(),
            s.metric.as_str(),
            &s.mean.to_string(),
            &s.sd.map(|v| v.to_string()).unwrap_or_default(),
            &s.replicates.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes failed benchmark replicates with their error messages.
pub fn write_benchmark_failures_csv(
    path: &Path,
    failures: &[crate::bench::ReplicateFailure],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["scenario", "cell", "replicate", "message"])
        .map_err(|e| csv_error(path, e))?;
    for f in failures {
        w.write_record([
            f.scenario.as_str(),
            f.cell.as_str(),
            &f.replicate.to_string(),
            f.message.as_str(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes simulation ground truth to `dir/truth/`; returns the files written.
pub fn write_truth(dir: &Path, truth: &SimTruth) -> Result<Vec<PathBuf>> {
    let truth_dir = dir.join("truth");
    ensure_dir(&truth_dir)?;
    let mut written = Vec::new();

    let beta0 = truth_dir.join("beta0.csv");
    write_matrix_csv(&beta0, &truth.beta0, "z")?;
    let a0 = truth_dir.join("A0.csv");
    write_matrix_csv(&a0, &truth.a0, "f")?;
    written.extend([beta0, a0]);

    for s in 0..truth.b0.len() {
        let b0 = study_file(&truth_dir, "B0", s + 1);
        write_matrix_csv(&b0, &truth.b0[s], "h")?;
        let f = study_file(&truth_dir, "F", s + 1);
        write_matrix_csv(&f, &truth.f[s], "f")?;
        let h = study_file(&truth_dir, "H", s + 1);
        write_matrix_csv(&h, &truth.h[s], "h")?;
        written.extend([b0, f, h]);
    }
    Ok(written)
}
