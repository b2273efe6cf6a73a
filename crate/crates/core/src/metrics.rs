//! Per-epoch training records, their CSV form, and speedup arithmetic.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,lr,train_ce,cv_accuracy,wall_seconds,workers,avg_events";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Learning rate in force at the start of the epoch.
    pub lr: f64,
    /// Mean minibatch cross-entropy over the epoch, measured before each update.
    pub train_ce: f64,
    /// Held-out accuracy of the averaged model at the end of the epoch.
    pub cv_accuracy: f64,
    /// Training wall time of this epoch alone.
    pub wall_seconds: f64,
    pub workers: usize,
    /// Averaging events so far, cumulative.
    pub avg_events: u64,
}

impl MetricsRecord {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{},{}",
            self.epoch,
            self.lr,
            self.train_ce,
            self.cv_accuracy,
            self.wall_seconds,
            self.workers,
            self.avg_events
        )
    }
}

pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_metrics_csv(text: &str, origin: &str) -> Result<Vec<MetricsRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("unexpected header `{h}`"))),
        None => return Err(err(1, "missing header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(err(lineno, format!("expected 7 fields, found {}", f.len())));
        }
        let real = |idx: usize| -> Result<f64> {
            f[idx]
                .parse()
                .map_err(|_| err(lineno, format!("`{}` is not a number", f[idx])))
        };
        let int = |idx: usize| -> Result<u64> {
            f[idx]
                .parse()
                .map_err(|_| err(lineno, format!("`{}` is not an integer", f[idx])))
        };
        out.push(MetricsRecord {
            epoch: int(0)? as usize,
            lr: real(1)?,
            train_ce: real(2)?,
            cv_accuracy: real(3)?,
            wall_seconds: real(4)?,
            workers: int(5)? as usize,
            avg_events: int(6)?,
        });
    }
    Ok(out)
}

pub fn write_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_to_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text, &path.display().to_string())
}

pub fn total_wall_seconds(records: &[MetricsRecord]) -> f64 {
    records.iter().map(|r| r.wall_seconds).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speedup {
    pub speedup: f64,
    /// Speedup divided by worker count.
    pub scaling: f64,
}

/// Ratio of total training wall time, serial over parallel.
pub fn compute_speedup(serial: &[MetricsRecord], parallel: &[MetricsRecord]) -> Result<Speedup> {
    let parallel_time = total_wall_seconds(parallel);
    if !(parallel_time > 0.0) {
        return Err(Error::InvalidArgument(
            "parallel run has zero total wall time".into(),
        ));
    }
    let workers = parallel.iter().map(|r| r.workers).max().unwrap_or(1).max(1);
    let speedup = total_wall_seconds(serial) / parallel_time;
    Ok(Speedup {
        speedup,
        scaling: speedup / workers as f64,
    })
}
