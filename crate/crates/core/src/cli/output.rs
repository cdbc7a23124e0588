//! File emission. Every writer is a pure function of its inputs, so
//! identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diagnostics::{format_value, DiagnosticsRecord};
use crate::dynamics::SimState;

use super::CliError;

/// Where [`emit_outputs`] writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub timeseries: PathBuf,
    pub snapshot: PathBuf,
    pub summary: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            timeseries: dir.join("timeseries.csv"),
            snapshot: dir.join("snapshot.txt"),
            summary: dir.join("summary.txt"),
        }
    }
}

/// Run metadata carried into the snapshot header.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMeta {
    pub config_hash: String,
    /// Set when the run stopped early; the snapshot is then the last valid
    /// state.
    pub truncated: bool,
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Header row plus one row per record.
pub fn timeseries_csv(records: &[DiagnosticsRecord]) -> Result<String, CliError> {
    let first = records.first().ok_or(CliError::EmptyRecords)?;
    let mut out = first.csv_header();
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    Ok(out)
}

/// Plain-text table of node coordinates and surface values under a `#`
/// comment header.
pub fn snapshot_text(state: &SimState, meta: &SnapshotMeta) -> String {
    let grid = state.h.grid();
    let mut out = String::new();
    let _ = writeln!(out, "# heleshaw snapshot");
    let _ = writeln!(out, "# config_sha256 = {}", meta.config_hash);
    let _ = writeln!(out, "# dimension = {}", grid.dim());
    let _ = writeln!(out, "# points_per_axis = {}", grid.n());
    let _ = writeln!(
        out,
        "# period = {}",
        format_value(Some(2.0 * std::f64::consts::PI))
    );
    let _ = writeln!(out, "# t = {}", format_value(Some(state.t)));
    let _ = writeln!(out, "# truncated = {}", meta.truncated);
    let cols = if grid.dim() == 1 { "x h" } else { "x y h" };
    let _ = writeln!(out, "# columns: {cols}");
    for (idx, h) in state.h.values().iter().enumerate() {
        let x = grid.coords(idx);
        if grid.dim() == 1 {
            let _ = writeln!(
                out,
                "{} {}",
                format_value(Some(x[0])),
                format_value(Some(*h))
            );
        } else {
            let _ = writeln!(
                out,
                "{} {} {}",
                format_value(Some(x[0])),
                format_value(Some(x[1])),
                format_value(Some(*h))
            );
        }
    }
    out
}

/// Writes the time series and the final-state snapshot.
pub fn emit_outputs(
    records: &[DiagnosticsRecord],
    state: &SimState,
    meta: &SnapshotMeta,
    paths: &OutputPaths,
) -> Result<(), CliError> {
    let csv = timeseries_csv(records)?;
    write_file(&paths.timeseries, &csv)?;
    write_file(&paths.snapshot, &snapshot_text(state, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, TorusGrid};

    fn state() -> SimState {
        let g = TorusGrid::new(1, 8).unwrap();
        SimState::new(0.5, Field::from_fn(&g, |x| x[0].sin())).unwrap()
    }

    fn meta() -> SnapshotMeta {
        SnapshotMeta {
            config_hash: "ab".repeat(32),
            truncated: false,
        }
    }

    #[test]
    fn one_record_gives_two_lines() {
        let csv = timeseries_csv(&[DiagnosticsRecord::new(&state())]).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("t,h_mean,h_l2,h_linf,"));
        assert!(csv.ends_with('\n'));
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(matches!(timeseries_csv(&[]), Err(CliError::EmptyRecords)));
        let dir = tempfile::tempdir().unwrap();
        let paths = OutputPaths::in_dir(dir.path());
        assert!(matches!(
            emit_outputs(&[], &state(), &meta(), &paths),
            Err(CliError::EmptyRecords)
        ));
        assert!(!paths.timeseries.exists());
    }

    #[test]
    fn snapshot_layout() {
        let text = snapshot_text(&state(), &meta());
        let header: Vec<&str> = text.lines().filter(|l| l.starts_with('#')).collect();
        assert!(header
            .iter()
            .any(|l| *l == format!("# config_sha256 = {}", "ab".repeat(32))));
        assert!(header.iter().any(|l| *l == "# points_per_axis = 8"));
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(' ').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 8);
        for r in &rows {
            assert!((r[1] - r[0].sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_dimensional_snapshot_has_three_columns() {
        let g = TorusGrid::new(2, 8).unwrap();
        let s = SimState::initial(Field::from_fn(&g, |x| x[0].cos() * x[1].sin())).unwrap();
        let text = snapshot_text(&s, &meta());
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 64);
        assert!(rows.iter().all(|r| r.split(' ').count() == 3));
    }

    #[test]
    fn outputs_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputPaths::in_dir(&dir.path().join("a"));
        let b = OutputPaths::in_dir(&dir.path().join("b"));
        let records = vec![DiagnosticsRecord::new(&state()); 3];
        emit_outputs(&records, &state(), &meta(), &a).unwrap();
        emit_outputs(&records, &state(), &meta(), &b).unwrap();
        assert_eq!(
            fs::read(&a.timeseries).unwrap(),
            fs::read(&b.timeseries).unwrap()
        );
        assert_eq!(
            fs::read(&a.snapshot).unwrap(),
            fs::read(&b.snapshot).unwrap()
        );
    }
}
