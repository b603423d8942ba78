//! CSV and JSON artifacts.
//!
//! Every CSV starts with a single `#` comment line carrying the write time;
//! everything after it depends only on the inputs, so two runs with the same
//! config and seed differ in that line at most.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluation::{ErrorField, Histogram, SweepReport};
use crate::training::TrainRow;

/// Version stamped into every JSON report written here.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const TRAIN_COLUMNS: [&str; 8] =
    ["phase", "epoch", "effective_epoch", "total", "e_pde", "e_boundary", "grad_norm", "wall_ms"];
pub const ERROR_FIELD_COLUMNS: [&str; 4] = ["x", "y", "err_x", "err_y"];
pub const SWEEP_COLUMNS: [&str; 5] = ["axis_value", "run_id", "l2_test", "l2_train", "final_loss"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Versioned { schema_version: REPORT_SCHEMA_VERSION, body }
    }
}

fn stamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("# written at unix time {secs}\n")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(stamp().as_bytes())?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_train_csv(path: &Path, rows: &[TrainRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRAIN_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.phase.to_string(),
            r.epoch.to_string(),
            r.effective_epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.total.to_string(),
            opt(r.e_pde),
            opt(r.e_boundary),
            r.grad_norm.to_string(),
            opt(r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Unmasked cells only, in row-major order.
pub fn write_error_field_csv(path: &Path, field: &ErrorField) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(ERROR_FIELD_COLUMNS)?;
    for c in field.cells.iter().flatten() {
        w.write_record(c.map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One row per cell with cell indices `i, j` (and `k` in 3D). Overflow counts
/// are not part of the grid; they go in the summary JSON.
pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = csv_writer(path)?;
    let axes = ["i", "j", "k"];
    let mut header: Vec<&str> = axes[..hist.dim].to_vec();
    header.extend(["source_count", "image_count"]);
    w.write_record(&header)?;
    for cell in 0..hist.source.len() {
        let mut rec: Vec<String> = hist.coords(cell).iter().map(|i| i.to_string()).collect();
        rec.push(hist.source[cell].to_string());
        rec.push(hist.image[cell].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per run per axis value. Failed runs keep their row with empty
/// metric fields.
pub fn write_sweep_csv(path: &Path, sweep: &SweepReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SWEEP_COLUMNS)?;
    for cell in &sweep.cells {
        for run in &cell.runs {
            w.write_record([
                cell.value.to_string(),
                run.run_id.to_string(),
                opt(run.l2_test),
                opt(run.l2_train),
                opt(run.final_loss),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Versioned::new(body))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a CSV written here, skipping the timestamp line.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect())).collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// CSV contents without the timestamp line, for byte comparisons.
pub fn csv_body(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(match text.split_once('\n') {
        Some((first, rest)) if first.starts_with('#') => rest.to_string(),
        _ => text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Phase;

    fn row(phase: Phase, epoch: usize) -> TrainRow {
        TrainRow {
            phase,
            epoch,
            effective_epoch: (phase != Phase::Pretrain).then_some(epoch),
            total: 0.1 + epoch as f64,
            e_pde: (phase != Phase::Pretrain).then_some(0.1),
            e_boundary: (phase != Phase::Pretrain).then_some(epoch as f64),
            grad_norm: 1e-3,
            wall_ms: None,
            monitor: None,
        }
    }

    #[test]
    fn train_csv_round_trips_with_empty_optionals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let rows = vec![row(Phase::Pretrain, 1), row(Phase::Adam, 1)];
        write_train_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# written at unix time "));
        let (header, body) = read_csv(&path).unwrap();
        assert_eq!(header, TRAIN_COLUMNS);
        assert_eq!(body[0], ["pretrain", "1", "", "1.1", "", "", "0.001", ""]);
        assert_eq!(body[1][0], "adam");
        assert_eq!(body[1][3].parse::<f64>().unwrap(), 1.1);
    }

    #[test]
    fn body_ignores_the_stamp() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        let rows = vec![row(Phase::Adam, 3)];
        write_train_csv(&a, &rows).unwrap();
        write_train_csv(&b, &rows).unwrap();
        assert_eq!(csv_body(&a).unwrap(), csv_body(&b).unwrap());
    }

    #[test]
    fn json_carries_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        #[derive(Serialize)]
        struct R {
            x: f64,
        }
        write_json(&path, &R { x: 0.5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["schema_version"], REPORT_SCHEMA_VERSION);
        assert_eq!(v["x"], 0.5);
    }
}
