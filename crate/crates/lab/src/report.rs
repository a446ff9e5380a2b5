//! Summary table over every CSV below a directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io_err, LabError, Result};
use crate::experiments::{table, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSummary {
    /// Path relative to the scanned directory, `/`-separated.
    pub file: String,
    pub column: String,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

fn collect_csvs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_csvs(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

/// Count, mean, min and max of every column whose values all parse as
/// numbers. Infinite and NaN entries are counted but excluded from the
/// statistics when any finite value exists.
pub fn summarize(dir: &Path) -> Result<Vec<ColumnSummary>> {
    if !dir.is_dir() {
        return Err(LabError::config("report", format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    collect_csvs(dir, &mut files)?;
    if files.is_empty() {
        return Err(LabError::config("report", format!("no CSV files found under {}", dir.display())));
    }
    let mut out = Vec::new();
    for path in files {
        let rel = path.strip_prefix(dir).unwrap_or(&path);
        let file = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let mut rdr = csv::Reader::from_path(&path)?;
        let headers = rdr.headers()?.clone();
        let mut cols: Vec<Option<Vec<f64>>> = vec![Some(Vec::new()); headers.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (k, col) in cols.iter_mut().enumerate() {
                if let Some(vals) = col {
                    match rec.get(k).map(str::parse::<f64>) {
                        Some(Ok(v)) => vals.push(v),
                        _ => *col = None,
                    }
                }
            }
        }
        for (name, col) in headers.iter().zip(cols) {
            let Some(vals) = col else { continue };
            if vals.is_empty() {
                continue;
            }
            let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
            let used = if finite.is_empty() { &vals } else { &finite };
            out.push(ColumnSummary {
                file: file.clone(),
                column: name.to_string(),
                count: vals.len(),
                mean: used.iter().sum::<f64>() / used.len() as f64,
                min: used.iter().copied().fold(f64::INFINITY, f64::min),
                max: used.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Ok(out)
}

pub fn summary_table(rows: &[ColumnSummary]) -> Result<Table> {
    table(
        "summary.csv",
        &["file", "column", "count", "mean", "min", "max"],
        rows.iter().map(|r| {
            vec![
                r.file.clone(),
                r.column.clone(),
                r.count.to_string(),
                r.mean.to_string(),
                r.min.to_string(),
                r.max.to_string(),
            ]
        }),
    )
}

/// Fixed-width text rendering for the terminal.
pub fn render(rows: &[ColumnSummary]) -> String {
    let fw = rows.iter().map(|r| r.file.len()).max().unwrap_or(4).max(4);
    let cw = rows.iter().map(|r| r.column.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:fw$}  {:cw$}  {:>6}  {:>12}  {:>12}  {:>12}\n", "file", "column", "count", "mean", "min", "max");
    for r in rows {
        s += &format!(
            "{:fw$}  {:cw$}  {:>6}  {:>12.6}  {:>12.6}  {:>12.6}\n",
            r.file, r.column, r.count, r.mean, r.min, r.max
        );
    }
    s
}
