//! One experiment: data, optional pretraining, training, outputs.

use std::time::Instant;

use crate::data::{generate_synthetic, load_csv, split_cv, Dataset, SplitSpec, Standardizer};
use crate::error::Result;
use crate::harness::config::{DataSource, InitKind, RunConfig};
use crate::metrics::{write_metrics, MetricsRecord};
use crate::network::{checkpoint, MlpModel};
use crate::optimizer::LrSchedule;
use crate::parallel::{serial_train, train_parallel, ParallelPlan, TrainConfig};
use crate::pretrain::greedy_pretrain;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub initial_model: MlpModel,
    pub model: MlpModel,
    pub metrics: Vec<MetricsRecord>,
    pub initial_cv_accuracy: f64,
    /// Pretraining time; not part of the per-epoch training wall time.
    pub pretrain_seconds: f64,
    pub stopped_early: bool,
    pub train_examples: usize,
    pub cv_examples: usize,
}

impl RunReport {
    /// Held-out accuracy after the last epoch (of the start model if none ran).
    pub fn final_cv_accuracy(&self) -> f64 {
        self.metrics
            .last()
            .map_or(self.initial_cv_accuracy, |r| r.cv_accuracy)
    }
}

/// Independent streams drawn from the experiment seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    Rng::new(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64()
}

const SPLIT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

pub fn layer_dims(cfg: &RunConfig, input_dim: usize, classes: usize) -> Vec<usize> {
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat(cfg.hidden_dim).take(cfg.hidden_layers));
    dims.push(classes);
    dims
}

/// Train and held-out sets after splitting and (optionally) standardising
/// with statistics from the training part only.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let full = match &cfg.data {
        DataSource::Csv(path) => load_csv(path)?,
        DataSource::Synthetic(spec) => generate_synthetic(spec)?,
    };
    let split = SplitSpec {
        cv_fraction: cfg.cv_fraction,
        seed: derive_seed(cfg.seed, SPLIT_STREAM),
    };
    let (mut train, mut cv) = split_cv(&full, &split)?;
    if cfg.standardize {
        let st = Standardizer::fit(&train.features);
        st.apply(&mut train);
        st.apply(&mut cv);
    }
    Ok((train, cv))
}

/// Starting model and the seconds spent producing it.
pub fn initial_model(cfg: &RunConfig, train: &Dataset) -> Result<(MlpModel, f64)> {
    let dims = layer_dims(cfg, train.dim(), train.num_classes);
    let mut rng = Rng::new(derive_seed(cfg.seed, INIT_STREAM));
    let start = Instant::now();
    let model = match cfg.init {
        InitKind::Random => MlpModel::init_random(&dims, cfg.activation, &mut rng)?,
        InitKind::Rbm => greedy_pretrain(&dims, &train.features, &cfg.pretrain, &mut rng)
            .map_err(|e| e.within("pretrain"))?,
    };
    Ok((model, start.elapsed().as_secs_f64()))
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        optimizer: cfg.optimizer,
        ng: cfg.ng,
        schedule: LrSchedule::new(cfg.lr_schedule, cfg.effective_lr(), cfg.epochs),
    }
}

/// Data split and starting model shared by every run that agrees on the
/// data, architecture, initialisation and seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub cv: Dataset,
    pub model0: MlpModel,
    pub pretrain_seconds: f64,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, cv) = prepare_data(cfg).map_err(|e| e.within("data"))?;
    let (model0, pretrain_seconds) = initial_model(cfg, &train)?;
    Ok(Prepared {
        train,
        cv,
        model0,
        pretrain_seconds,
    })
}

/// Key identifying the [`Prepared`] state a config needs.
pub fn prepared_key(cfg: &RunConfig) -> String {
    let c = cfg;
    format!(
        "{:?}|{}|{:?}|{}|{}|{}|{}|{}|{:?}",
        c.data,
        c.standardize,
        c.cv_fraction,
        c.seed,
        c.hidden_layers,
        c.hidden_dim,
        c.activation,
        c.init,
        c.pretrain
    )
}

/// Runs the experiment without touching the filesystem beyond reading data.
pub fn execute(cfg: &RunConfig) -> Result<RunReport> {
    execute_prepared(cfg, &prepare(cfg)?)
}

pub fn execute_prepared(cfg: &RunConfig, prep: &Prepared) -> Result<RunReport> {
    cfg.validate()?;
    let tc = train_config(cfg);
    let seed = derive_seed(cfg.seed, TRAIN_STREAM);
    let (train, cv) = (&prep.train, &prep.cv);
    let outcome = if cfg.workers == 1 {
        serial_train(&prep.model0, train, cv, &tc, cfg.minibatch, seed)
    } else {
        let plan = ParallelPlan {
            workers: cfg.workers,
            avg_frequency: cfg.avg_frequency,
            minibatch_size: cfg.minibatch,
            base_seed: seed,
        };
        train_parallel(&plan, &prep.model0, train, cv, &tc)
    }
    .map_err(|e| e.within("training"))?;
    Ok(RunReport {
        config: cfg.clone(),
        initial_model: prep.model0.clone(),
        model: outcome.model,
        metrics: outcome.metrics,
        initial_cv_accuracy: outcome.initial_cv_accuracy,
        pretrain_seconds: prep.pretrain_seconds,
        stopped_early: outcome.stopped_early,
        train_examples: train.len(),
        cv_examples: cv.len(),
    })
}

/// Runs the experiment and writes the configured metrics CSV and checkpoint.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let report = execute(cfg)?;
    if let Some(path) = &cfg.metrics_out {
        write_metrics(&report.metrics, path).map_err(|e| e.within("metrics"))?;
    }
    if let Some(path) = &cfg.checkpoint_out {
        checkpoint::save(&report.model, path).map_err(|e| e.within("checkpoint"))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn small() -> RunConfig {
        RunConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                classes: 3,
                dim: 5,
                per_class: 40,
                separation: 3.0,
                seed: 2,
            }),
            hidden_layers: 1,
            hidden_dim: 6,
            minibatch: 8,
            epochs: 2,
            ..RunConfig::default()
        }
    }

    #[test]
    fn dims_follow_config() {
        let cfg = RunConfig::default();
        assert_eq!(layer_dims(&cfg, 64, 10), vec![64, 128, 128, 10]);
    }

    #[test]
    fn zero_epochs_keeps_initial_model() {
        let cfg = RunConfig {
            epochs: 0,
            ..small()
        };
        let r = execute(&cfg).unwrap();
        assert!(r.metrics.is_empty());
        assert_eq!(r.model, r.initial_model);
    }

    #[test]
    fn reruns_match_except_wall_time() {
        let cfg = small();
        let strip = |r: &RunReport| {
            r.metrics
                .iter()
                .map(|m| {
                    (
                        m.epoch,
                        m.lr,
                        m.train_ce,
                        m.cv_accuracy,
                        m.workers,
                        m.avg_events,
                    )
                })
                .collect::<Vec<_>>()
        };
        let a = execute(&cfg).unwrap();
        let b = execute(&cfg).unwrap();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics.len(), 2);
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (1..=3).map(|k| derive_seed(0, k)).collect();
        assert!(s[0] != s[1] && s[1] != s[2]);
    }
}
