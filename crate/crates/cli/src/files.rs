//! On-disk formats.
//!
//! `data.csv` stores one point per row (`n` rows of `d` values), the
//! transpose of the in-memory `d × n` layout. Floats are written with 17
//! significant digits so a reload reproduces every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use stiefel_cluster::{DMatrix, Labeling};

use crate::CliError;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingInput(format!(
            "{} does not exist",
            path.display()
        ))),
        Err(e) => Err(CliError::io(path, e)),
    }
}

/// Writes the columns of `x` (`d × n`) as `n` CSV rows.
pub fn write_points(path: &Path, x: &DMatrix<f64>) -> Result<(), CliError> {
    let mut out = String::with_capacity(x.len() * 24);
    for col in x.column_iter() {
        let row: Vec<String> = col.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write(path, &out)
}

/// Reads `n` rows of `d` values into a `d × n` matrix.
pub fn read_points(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = read_input(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| {
                    CliError::Format(format!("{}:{}: {e}: {v:?}", path.display(), lineno + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::Format(format!(
                    "{}:{}: expected {} values, found {}",
                    path.display(),
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Format(format!("{} holds no points", path.display())));
    }
    let (n, d) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(d, n, |r, i| rows[i][r]))
}

/// One 1-based cluster id per line.
pub fn write_labels(path: &Path, labels: &Labeling) -> Result<(), CliError> {
    let mut out = String::new();
    for l in labels.one_based() {
        writeln!(out, "{l}").expect("writing to a String");
    }
    write(path, &out)
}

pub fn read_labels(path: &Path) -> Result<Labeling, CliError> {
    let text = read_input(path)?;
    let ids = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Format(format!("{}: {e}: {l:?}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Labeling::from_one_based(&ids).map_err(CliError::from)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format(e.to_string()))?;
    text.push('\n');
    write(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_input(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// `iteration,loss,log_post` with 1-based iteration counts.
pub fn write_trace(path: &Path, loss: &[f64], log_post: &[f64]) -> Result<(), CliError> {
    let mut out = String::from("iteration,loss,log_post\n");
    for (i, (l, p)) in loss.iter().zip(log_post).enumerate() {
        writeln!(out, "{},{},{}", i + 1, fmt_f64(*l), fmt_f64(*p)).expect("writing to a String");
    }
    write(path, &out)
}

/// Row-major nested vectors, the JSON layout for matrices.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Format(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
