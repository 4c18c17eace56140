//! Delimiter-separated output tables.
//!
//! All tables are comma-separated text with a header row and
//! 17-significant-digit numbers, which round-trip f64 exactly.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Formats one value with 17 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a table with the given header and rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// Reads a table written by [`write_table`]; returns (header, rows).
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty table".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Parse(format!("table row {}: {e}", i + 2)))?;
        if row.len() != header.len() {
            return Err(Error::Parse(format!(
                "table row {} has {} fields, header has {}",
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Writes mean/variance statistics as an (x, t, mean, variance) table.
pub fn write_stats(path: &Path, stats: &super::McStats) -> Result<()> {
    let mut rows = Vec::new();
    for (i, &t) in stats.times.iter().enumerate() {
        for (k, &x) in stats.grid.iter().enumerate() {
            rows.push(vec![x, t, stats.mean[[i, k]], stats.variance[[i, k]]]);
        }
    }
    write_table(path, &["x", "t", "mean", "variance"], &rows)
}

/// Reads an (x, t, mean, variance) table back into per-time fields.
pub struct StatsTable {
    pub times: Vec<f64>,
    pub grid: Vec<f64>,
    /// mean[time][k], variance[time][k]
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
}

pub fn read_stats(path: &Path) -> Result<StatsTable> {
    let (header, rows) = read_table(path)?;
    if header != ["x", "t", "mean", "variance"] {
        return Err(Error::Parse(format!("unexpected stats header {header:?}")));
    }
    let mut times: Vec<f64> = Vec::new();
    let mut grid: Vec<f64> = Vec::new();
    for row in &rows {
        if !times.iter().any(|&t| t == row[1]) {
            times.push(row[1]);
        }
        if times.len() == 1 {
            grid.push(row[0]);
        }
    }
    let n_x = grid.len();
    if n_x == 0 || rows.len() != times.len() * n_x {
        return Err(Error::Parse(format!(
            "stats table is not a complete (x, t) grid: {} rows, {} times, {} points",
            rows.len(),
            times.len(),
            n_x
        )));
    }
    let mut mean = vec![vec![0.0; n_x]; times.len()];
    let mut variance = vec![vec![0.0; n_x]; times.len()];
    for (r, row) in rows.iter().enumerate() {
        let i = r / n_x;
        let k = r % n_x;
        mean[i][k] = row[2];
        variance[i][k] = row[3];
    }
    Ok(StatsTable {
        times,
        grid,
        mean,
        variance,
    })
}

/// Writes BO modal snapshots: eigenvalues (t, i, lambda), modes
/// (x, t, i, value), and coefficients (sample, t, i, value) tables.
pub fn write_bo_run(dir: &Path, run: &super::BoRun) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut lam_rows = Vec::new();
    let mut mode_rows = Vec::new();
    let mut coeff_rows = Vec::new();
    for snap in &run.snapshots {
        for (i, &l) in snap.lambdas.iter().enumerate() {
            lam_rows.push(vec![snap.t, i as f64, l]);
        }
        for (k, &x) in run.grid.iter().enumerate() {
            for i in 0..snap.lambdas.len() {
                mode_rows.push(vec![x, snap.t, i as f64, snap.modes[[k, i]]]);
            }
        }
        for s in 0..snap.coeffs.nrows() {
            for i in 0..snap.lambdas.len() {
                coeff_rows.push(vec![s as f64, snap.t, i as f64, snap.coeffs[[s, i]]]);
            }
        }
    }
    write_table(&dir.join("bo_lambda.csv"), &["t", "mode", "lambda"], &lam_rows)?;
    write_table(
        &dir.join("bo_modes.csv"),
        &["x", "t", "mode", "value"],
        &mode_rows,
    )?;
    write_table(
        &dir.join("bo_coeffs.csv"),
        &["sample", "t", "mode", "value"],
        &coeff_rows,
    )?;
    let mut stat_rows = Vec::new();
    for snap in &run.snapshots {
        let (mean, var) = run.stats_at(snap.t);
        for (k, &x) in run.grid.iter().enumerate() {
            stat_rows.push(vec![x, snap.t, mean[k], var[k]]);
        }
    }
    write_table(
        &dir.join("bo_stats.csv"),
        &["x", "t", "mean", "variance"],
        &stat_rows,
    )
}
