//! Comma-separated data files: one header row, then numeric rows with no
//! missing values.

use std::fs;
use std::path::Path;

use spbn::Dataset;

use crate::error::{CliError, CliResult};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn parse_dataset(text: &str, source: &str) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{source}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.is_empty() || columns.iter().any(String::is_empty) {
        return Err(CliError::Data(format!("{source}: header has an empty column name")));
    }
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{source}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        for (field, name) in record.iter().zip(&columns) {
            if field.is_empty() {
                return Err(CliError::Data(format!(
                    "{source}: row {line}, column `{name}`: missing value"
                )));
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!(
                    "{source}: row {line}, column `{name}`: `{field}` is not a number"
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "{source}: row {line}, column `{name}`: non-finite value"
                )));
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(CliError::Data(format!("{source}: no data rows")));
    }
    Ok(Dataset::new(columns, values)?)
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let text = read_text(path)?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = data.columns().join(",");
    out.push('\n');
    for row in data.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path.display().to_string(), e))
}
