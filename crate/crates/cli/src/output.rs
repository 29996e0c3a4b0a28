//! Trajectory CSV and JSON report writers.

use std::path::Path;

use fuller_core::dynamics::Trajectory;
use fuller_core::geometry::ExtendedPoint;
use fuller_core::lyapunov::{wbar, Check, QlfParams};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const CSV_HEADER: [&str; 6] = ["t", "x", "y", "u", "arc_index", "wbar"];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV row per sample. Times are shifted by `time_shift`; the `wbar`
/// column is left empty outside the certificate ball.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    step: f64,
    time_shift: f64,
    qlf: &QlfParams,
) -> Result<usize, CliError> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    let rows = traj.samples(Some(step));
    for (z, k) in &rows {
        let u = k.map(|k| fmt_f64(traj.arcs[k].control)).unwrap_or_default();
        let arc = k.map(|k| k.to_string()).unwrap_or_default();
        let wb = wbar_cell(z, qlf)?;
        w.write_record([fmt_f64(z.t + time_shift), fmt_f64(z.x), fmt_f64(z.y), u, arc, wb])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(rows.len())
}

fn wbar_cell(z: &ExtendedPoint, qlf: &QlfParams) -> Result<String, CliError> {
    if !qlf.contains(&z.state()) {
        return Ok(String::new());
    }
    wbar(z, qlf)
        .map(fmt_f64)
        .map_err(|e| CliError::Failed(format!("certificate evaluation at {z:?}: {e}")))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub grid_n: usize,
    pub worst: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
}

impl From<&Check> for CheckRow {
    fn from(c: &Check) -> Self {
        CheckRow {
            name: c.name.clone(),
            grid_n: c.grid_n,
            worst: c.worst.filter(|w| w.is_finite()),
            threshold: c.threshold,
            pass: c.pass,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report<S: Serialize> {
    pub tool_version: &'static str,
    pub config: RunConfig,
    pub checks: Vec<CheckRow>,
    pub summary: S,
}

impl<S: Serialize> Report<S> {
    pub fn new(config: &RunConfig, checks: Vec<CheckRow>, summary: S) -> Self {
        Report { tool_version: env!("CARGO_PKG_VERSION"), config: config.clone(), checks, summary }
    }

    pub fn first_failure(&self) -> Option<&CheckRow> {
        self.checks.iter().find(|c| !c.pass)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        ensure_parent(path)?;
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Failed(format!("report serialization: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    /// `Failed` naming the first failing check and its worst value.
    pub fn verdict(&self) -> Result<(), CliError> {
        match self.first_failure() {
            None => Ok(()),
            Some(c) => Err(CliError::Failed(format!(
                "check \"{}\" failed: worst {} against threshold {}",
                c.name,
                c.worst.map_or("n/a".to_string(), |w| format!("{w:e}")),
                c.threshold
            ))),
        }
    }
}
