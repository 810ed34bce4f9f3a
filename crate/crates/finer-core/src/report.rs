//! CSV and markdown emission helpers. Floats are written in shortest
//! round-trip form so identical runs produce byte-identical files.

use std::path::Path;

use crate::error::{Error, Result};

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::runtime(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(header)
        .map_err(|e| Error::runtime(format!("csv write: {e}")))?;
    for row in rows {
        writer
            .write_record(row)
            .map_err(|e| Error::runtime(format!("csv write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::runtime(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::data(format!("csv header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::data(format!("csv row: {e}")))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Renders a CSV table as a markdown table for the summary report.
pub fn csv_to_markdown(path: &Path) -> Result<String> {
    let (header, rows) = read_csv(path)?;
    let mut out = String::new();
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for row in rows {
        let trimmed: Vec<String> = row
            .iter()
            .map(|cell| match cell.parse::<f64>() {
                Ok(v) if cell.contains('.') => format!("{v:.4}"),
                _ => cell.clone(),
            })
            .collect();
        out.push_str(&format!("| {} |\n", trimmed.join(" | ")));
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
