//! CSV and JSON output formats.
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`, so files re-read bit-identically.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::CliError;
use crate::analysis::ConvergenceTable;
use crate::integrate::Trajectory;

pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

fn write_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

fn read_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot read {}: {e}", path.display()))
}

/// Time series with header `t,c_0,...,c_N`, one row per sample.
pub fn write_time_series(path: &Path, trajectory: &Trajectory) -> Result<(), CliError> {
    let n = trajectory.samples.first().map_or(0, |s| s.state.n());
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    let header: Vec<String> = std::iter::once("t".to_string()).chain((0..=n).map(|i| format!("c_{i}"))).collect();
    w.write_record(&header).map_err(|e| write_error(path, e))?;
    for s in &trajectory.samples {
        let row: Vec<String> = std::iter::once(s.state.time())
            .chain(s.state.values().iter().copied())
            .map(format_f64)
            .collect();
        w.write_record(&row).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| write_error(path, e))
}

/// Sample times and concentration rows of a time-series CSV.
pub fn read_time_series(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| read_error(path, e))?;
    let headers = r.headers().map_err(|e| read_error(path, e))?.clone();
    let well_formed = headers.get(0) == Some("t")
        && headers.len() >= 2
        && headers.iter().skip(1).enumerate().all(|(i, h)| h == format!("c_{i}"));
    if !well_formed {
        return Err(read_error(path, "header must be t,c_0,...,c_N"));
    }
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        let values: Vec<f64> = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| read_error(path, e))?;
        times.push(values[0]);
        rows.push(values[1..].to_vec());
    }
    Ok((times, rows))
}

/// Sweep table with header `i,t,N,c,delta_prev`; `delta_prev` is empty when absent.
pub fn write_sweep(path: &Path, table: &ConvergenceTable) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    w.write_record(["i", "t", "N", "c", "delta_prev"]).map_err(|e| write_error(path, e))?;
    for row in &table.rows {
        w.write_record([
            row.i.to_string(),
            format_f64(row.t),
            row.n.to_string(),
            format_f64(row.c),
            row.delta_prev.map(format_f64).unwrap_or_default(),
        ])
        .map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| write_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| write_error(path, e))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| write_error(path, e))?;
    writeln!(f).map_err(|e| write_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1.0, 0.1, 1.0 / 3.0, 1e-300, 6.02e23, f64::MIN_POSITIVE, 5e-324] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(format_f64(0.25), "0.25");
    }
}
