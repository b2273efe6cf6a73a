//! Comparison grids: one config key varied over a list of values, each cell
//! repeated over several seeds.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::harness::config::{RunConfig, KEYS};
use crate::harness::run::{execute, execute_prepared, prepare, prepared_key, Prepared, RunReport};
use crate::metrics::compute_speedup;

pub trait Runner {
    fn run(&mut self, cfg: &RunConfig) -> Result<Arc<RunReport>>;
}

/// Runs every request from scratch.
#[derive(Debug, Default)]
pub struct DirectRunner;

impl Runner for DirectRunner {
    fn run(&mut self, cfg: &RunConfig) -> Result<Arc<RunReport>> {
        execute(cfg).map(Arc::new)
    }
}

/// Memoises successful runs by their resolved configuration, so a grid and
/// its serial baselines never train the same thing twice. Data splits and
/// (pretrained) start models are shared across runs that agree on them.
#[derive(Debug, Default)]
pub struct CachedRunner {
    cache: HashMap<String, Arc<RunReport>>,
    prepared: HashMap<String, Arc<Prepared>>,
    pub executed: usize,
}

impl CachedRunner {
    pub fn new() -> Self {
        Self::default()
    }
}

fn cache_key(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.metrics_out = None;
    c.checkpoint_out = None;
    if c.workers == 1 {
        // A single worker never averages.
        c.avg_frequency = 1;
    }
    c.to_config_text()
}

impl Runner for CachedRunner {
    fn run(&mut self, cfg: &RunConfig) -> Result<Arc<RunReport>> {
        let key = cache_key(cfg);
        if let Some(r) = self.cache.get(&key) {
            return Ok(Arc::clone(r));
        }
        let pkey = prepared_key(cfg);
        let prep = match self.prepared.get(&pkey) {
            Some(p) => Arc::clone(p),
            None => {
                let p = Arc::new(prepare(cfg)?);
                self.prepared.insert(pkey, Arc::clone(&p));
                p
            }
        };
        let report = Arc::new(execute_prepared(cfg, &prep)?);
        self.executed += 1;
        self.cache.insert(key, Arc::clone(&report));
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridOptions {
    /// Seeds `base.seed, base.seed + 1, …`.
    pub seeds: usize,
    /// Also train the `workers = 1` counterpart of every cell for speedup.
    pub speedup: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            seeds: 1,
            speedup: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std })
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub value: String,
    /// Final held-out accuracy of each successful seed.
    pub cv_accuracy: Vec<f64>,
    pub speedup: Vec<f64>,
    /// `(seed, error message)` for each failed seed.
    pub failures: Vec<(u64, String)>,
}

impl GridRow {
    pub fn cv_summary(&self) -> Option<MeanStd> {
        mean_std(&self.cv_accuracy)
    }

    pub fn speedup_summary(&self) -> Option<MeanStd> {
        mean_std(&self.speedup)
    }
}

#[derive(Debug, Clone)]
pub struct GridSummary {
    pub axis: String,
    pub rows: Vec<GridRow>,
}

pub const GRID_HEADER: &str =
    "axis,value,runs,failed,cv_accuracy_mean,cv_accuracy_std,speedup_mean,speedup_std,status";

impl GridSummary {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{GRID_HEADER}\n");
        let num = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        for row in &self.rows {
            let cv = row.cv_summary();
            let sp = row.speedup_summary();
            let status = match row.failures.first() {
                None => "ok".to_string(),
                Some((seed, msg)) => {
                    format!("FAILED seed {seed}: {}", msg.replace([',', '\n'], ";"))
                }
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.axis,
                row.value,
                row.cv_accuracy.len() + row.failures.len(),
                row.failures.len(),
                num(cv.map(|s| s.mean)),
                num(cv.map(|s| s.std)),
                num(sp.map(|s| s.mean)),
                num(sp.map(|s| s.std)),
                status
            );
        }
        out
    }

    pub fn row(&self, value: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

/// Runs `base` with `axis` set to each value in turn. Failed cells are kept
/// in the table with their error instead of aborting the grid.
pub fn compare_grid(
    base: &RunConfig,
    axis: &str,
    values: &[String],
    opts: GridOptions,
    runner: &mut dyn Runner,
) -> Result<GridSummary> {
    if !KEYS.contains(&axis) || matches!(axis, "metrics_out" | "checkpoint_out") {
        return Err(Error::config(axis, None, "not a grid axis"));
    }
    if values.is_empty() || opts.seeds == 0 {
        return Err(Error::InvalidArgument(
            "grid needs at least one value and one seed".into(),
        ));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut row = GridRow {
            value: value.clone(),
            cv_accuracy: Vec::new(),
            speedup: Vec::new(),
            failures: Vec::new(),
        };
        let mut cell = base.clone();
        cell.metrics_out = None;
        cell.checkpoint_out = None;
        if let Err(e) = cell.set(axis, value) {
            // An unusable value fails every seed of its row.
            for s in 0..opts.seeds {
                row.failures.push((base.seed + s as u64, e.to_string()));
            }
            rows.push(row);
            continue;
        }
        for s in 0..opts.seeds {
            let seed = base.seed + s as u64;
            let cfg = RunConfig {
                seed,
                ..cell.clone()
            };
            match run_cell(&cfg, opts.speedup, runner) {
                Ok((acc, sp)) => {
                    row.cv_accuracy.push(acc);
                    row.speedup.extend(sp);
                }
                Err(e) => row.failures.push((seed, e.to_string())),
            }
        }
        rows.push(row);
    }
    Ok(GridSummary {
        axis: axis.to_string(),
        rows,
    })
}

fn run_cell(
    cfg: &RunConfig,
    with_speedup: bool,
    runner: &mut dyn Runner,
) -> Result<(f64, Option<f64>)> {
    let report = runner.run(cfg)?;
    let speedup = if with_speedup && !report.metrics.is_empty() {
        let serial_cfg = RunConfig {
            workers: 1,
            ..cfg.clone()
        };
        let serial = runner.run(&serial_cfg)?;
        Some(compute_speedup(&serial.metrics, &report.metrics)?.speedup)
    } else {
        None
    };
    Ok((report.final_cv_accuracy(), speedup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;
    use crate::harness::config::{DataSource, InitKind};

    fn tiny() -> RunConfig {
        RunConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                classes: 3,
                dim: 4,
                per_class: 30,
                separation: 3.0,
                seed: 1,
            }),
            hidden_layers: 1,
            hidden_dim: 5,
            minibatch: 4,
            epochs: 1,
            init: InitKind::Random,
            ..RunConfig::default()
        }
    }

    #[test]
    fn mean_std_cases() {
        assert!(mean_std(&[]).is_none());
        assert_eq!(
            mean_std(&[2.0]).unwrap(),
            MeanStd {
                mean: 2.0,
                std: 0.0
            }
        );
        let s = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_value_single_seed_matches_plain_run() {
        let base = tiny();
        let mut runner = CachedRunner::new();
        let g = compare_grid(
            &base,
            "optimizer",
            &["ngsgd".to_string()],
            GridOptions {
                seeds: 1,
                speedup: false,
            },
            &mut runner,
        )
        .unwrap();
        let plain = execute(&base).unwrap();
        assert_eq!(g.rows[0].cv_accuracy, vec![plain.final_cv_accuracy()]);
    }

    #[test]
    fn failures_are_marked_not_fatal() {
        let mut runner = CachedRunner::new();
        let g = compare_grid(
            &tiny(),
            "avg_frequency",
            &["2".to_string(), "often".to_string()],
            GridOptions {
                seeds: 2,
                speedup: false,
            },
            &mut runner,
        )
        .unwrap();
        assert_eq!(g.rows[0].cv_accuracy.len(), 2);
        assert_eq!(g.rows[1].failures.len(), 2);
        let csv = g.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], GRID_HEADER);
        assert!(lines[2].contains("FAILED"));
        assert_eq!(lines[2].split(',').count(), 9);
        assert!(compare_grid(
            &tiny(),
            "colour",
            &["x".into()],
            GridOptions::default(),
            &mut runner
        )
        .is_err());
    }

    #[test]
    fn cache_reuses_serial_baselines() {
        let mut runner = CachedRunner::new();
        let base = RunConfig {
            workers: 2,
            ..tiny()
        };
        let g = compare_grid(
            &base,
            "avg_frequency",
            &["1".to_string(), "3".to_string()],
            GridOptions {
                seeds: 1,
                speedup: true,
            },
            &mut runner,
        )
        .unwrap();
        // Both parallel cells share one serial baseline.
        assert_eq!(runner.executed, 3);
        assert!(g
            .rows
            .iter()
            .all(|r| r.speedup.len() == 1 && r.speedup[0] > 0.0));
    }
}
