//! CSV reading and writing.
//!
//! Numeric cells are written with Rust's shortest round-trip formatting,
//! so parsing a written file recovers every `f64` bit for bit. On input,
//! a leading header row is detected (any cell that does not parse as a
//! number) and skipped; every data row must have the same number of
//! fields, and non-finite values are rejected.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CliError, Result};

/// Reads a dense numeric matrix. Rows are lines, columns are
/// comma-separated fields; blank lines are ignored.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut seen_content = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let first_content = !seen_content;
        seen_content = true;
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let vals = match parsed {
            Ok(vals) => vals,
            // A first line with non-numeric cells is a header row.
            Err(_) if first_content => continue,
            Err(e) => {
                return Err(CliError::input(format!(
                    "{}: line {}: {e}",
                    path.display(),
                    lineno + 1
                )));
            }
        };
        if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
            return Err(CliError::input(format!(
                "{}: line {}: non-finite value {bad}",
                path.display(),
                lineno + 1
            )));
        }
        match width {
            Some(w) if vals.len() != w => {
                return Err(CliError::input(format!(
                    "{}: line {} has {} fields, previous rows have {w}",
                    path.display(),
                    lineno + 1,
                    vals.len()
                )));
            }
            _ => width = Some(vals.len()),
        }
        rows.push(vals);
    }
    let ncols = width.ok_or_else(|| {
        CliError::input(format!("{}: no numeric rows found", path.display()))
    })?;
    let nrows = rows.len();
    if nrows == 0 {
        return Err(CliError::input(format!(
            "{}: only a header row, no data",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Reads a vector: a single-column or single-row CSV file.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 && m.nrows() != 1 {
        return Err(CliError::input(format!(
            "{}: expected one row or one column, got {}x{}",
            path.display(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.iter().copied().collect())
}

/// Writes a matrix without a header row, one CSV line per matrix row.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&m[(i, j)].to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes prebuilt text, mapping I/O failures to input errors.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}
