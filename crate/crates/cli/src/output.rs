//! CSV output.
//!
//! Trajectory files have the header `t,theta_1..theta_n,v_1..v_n,xi,J` and
//! one row per recorded sample. Numbers use Rust's shortest round-trip
//! formatting, so `.` is the only separator inside a value.

use std::path::Path;

use esc_core::integrate::Trajectory;

use crate::CliError;

pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("theta_{i}")));
    header.extend((1..=n).map(|i| format!("v_{i}")));
    header.push("xi".into());
    header.push("J".into());
    header
}

/// Writes a header and numeric rows.
pub fn write_rows<'a>(path: &Path, header: &[String], rows: impl IntoIterator<Item = &'a [f64]>) -> Result<(), CliError> {
    let to_err = |e: csv::Error| CliError::Io { path: path.display().to_string(), source: e.into() };
    let mut writer = csv::Writer::from_path(path).map_err(to_err)?;
    writer.write_record(header).map_err(to_err)?;
    for row in rows {
        writer.write_record(row.iter().map(|x| x.to_string())).map_err(to_err)?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}

/// Writes a flattened-state trajectory; `output(t, state)` fills the `J` column.
pub fn write_trajectory(
    path: &Path,
    trajectory: &Trajectory,
    n: usize,
    output: impl Fn(f64, &[f64]) -> f64,
) -> Result<(), CliError> {
    let rows: Vec<Vec<f64>> = trajectory
        .times
        .iter()
        .zip(&trajectory.states)
        .map(|(&t, x)| {
            let mut row = Vec::with_capacity(x.len() + 2);
            row.push(t);
            row.extend_from_slice(x);
            row.push(output(t, x));
            row
        })
        .collect();
    write_rows(path, &trajectory_header(n), rows.iter().map(Vec::as_slice))
}
