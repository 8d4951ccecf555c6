//! CSV and JSON artifacts, written atomically.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::certify::{BoundStatus, BOUND_NAMES};
use super::RateRecord;
use crate::error::{Error, Result};

/// Fixed leading columns of the records CSV; one `satisfied, lhs, rhs` triple
/// per bound follows.
pub const RECORD_COLUMNS: [&str; 9] = [
    "delta",
    "alpha",
    "strategy",
    "discrepancy",
    "data_error",
    "j_gap",
    "bregman_dist",
    "bregman_sym",
    "l2_error",
];

pub fn records_header() -> Vec<String> {
    let mut h: Vec<String> = RECORD_COLUMNS.iter().map(|s| s.to_string()).collect();
    for b in BOUND_NAMES {
        h.extend(["satisfied", "lhs", "rhs"].map(|s| format!("{b}_{s}")));
    }
    h
}

fn status_str(s: BoundStatus) -> &'static str {
    match s {
        BoundStatus::Satisfied => "true",
        BoundStatus::Violated => "false",
        BoundStatus::Skipped => "skipped",
    }
}

pub fn write_records_csv<W: Write>(records: &[RateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(records_header())?;
    for r in records {
        let mut row = vec![
            r.delta.to_string(),
            r.alpha.to_string(),
            r.strategy.to_string(),
            r.discrepancy.to_string(),
            r.data_error.to_string(),
            r.j_gap.to_string(),
            r.bregman_dist.to_string(),
            r.bregman_sym.to_string(),
            r.l2_error.to_string(),
        ];
        for name in BOUND_NAMES {
            match r.bound_checks.iter().find(|c| c.name == name) {
                Some(c) => row.extend([status_str(c.status).to_string(), c.lhs.to_string(), c.rhs.to_string()]),
                None => row.extend(["skipped".to_string(), String::new(), String::new()]),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per solve performed while choosing α, in evaluation order.
pub fn write_trace_csv<W: Write>(records: &[RateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["delta", "step", "alpha", "discrepancy", "iterations", "converged"])?;
    for r in records {
        for (k, p) in r.trace.iter().enumerate() {
            w.write_record([
                r.delta.to_string(),
                k.to_string(),
                p.alpha.to_string(),
                p.discrepancy.to_string(),
                p.iterations.to_string(),
                p.converged.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = fs::write(&tmp, bytes).and_then(|()| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}
