use std::path::Path;

use super::SplitAssignment;
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, SegmentRow};

pub fn write_split_csv(path: &Path, split: &SplitAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "pseudo_label", "split"])?;
    for (part, rows) in [("train", &split.train), ("valid", &split.valid)] {
        for (id, l) in rows {
            w.write_record([id.to_string(), l.to_string(), part.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_split_csv(path: &Path) -> Result<SplitAssignment> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Dependency(format!("cannot open split assignment {}: {e}", path.display())))?;
    let mut out = SplitAssignment { train: Vec::new(), valid: Vec::new() };
    for rec in r.records() {
        let rec = rec?;
        let bad = || Error::Format(format!("bad split row {:?}", rec));
        let id: u64 = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let l: u8 = rec.get(1).and_then(|v| v.parse().ok()).filter(|&l| l < 2).ok_or_else(bad)?;
        match rec.get(2) {
            Some("train") => out.train.push((id, l)),
            Some("valid") => out.valid.push((id, l)),
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

/// Table-shaped per-segment correctness; empty segments leave the rate blank.
pub fn write_segment_csv(path: &Path, rows: &[SegmentRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["segment", "n", "correctness", "error_rate"])?;
    for r in rows {
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        w.write_record([r.label.clone(), r.total.to_string(), fmt(r.correctness()), fmt(r.error_rate())])?;
    }
    w.flush()?;
    Ok(())
}

/// `(id, prediction, truth)` rows for scatter plots.
pub fn write_scatter_csv(path: &Path, rows: &[(u64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "prediction", "ground_truth"])?;
    for (id, p, t) in rows {
        w.write_record([id.to_string(), p.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<(u64, f64, f64)>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Dependency(format!("cannot open predictions {}: {e}", path.display())))?;
    if r.headers()?.iter().collect::<Vec<_>>() != ["id", "prediction", "ground_truth"] {
        return Err(Error::Format(format!("{}: expected header id,prediction,ground_truth", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || Error::Format(format!("bad prediction row {:?}", rec));
        let id: u64 = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let p: f64 = rec.get(1).and_then(|v| v.parse().ok()).filter(|v: &f64| v.is_finite()).ok_or_else(bad)?;
        let t: f64 = rec.get(2).and_then(|v| v.parse().ok()).filter(|v: &f64| v.is_finite()).ok_or_else(bad)?;
        out.push((id, p, t));
    }
    Ok(out)
}

pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MetricsReport::CSV_HEADER)?;
    w.write_record(report.csv_row())?;
    w.flush()?;
    Ok(())
}
