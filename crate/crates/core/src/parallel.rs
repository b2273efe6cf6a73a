//! Data-parallel training by periodic model averaging.
//!
//! `m` workers start from the same model, each owns a disjoint shard of the
//! training data, and each runs ordinary minibatch updates on its own copy.
//! After every `n` local updates (and at every epoch boundary) all workers
//! block on an all-reduce that replaces every copy with the arithmetic mean
//! of the `m` parameter vectors.
//!
//! Workers are threads that talk to a coordinator over channels. The
//! coordinator gathers one contribution per rank, reduces them with a fixed
//! rank-ordered binary tree and sends the identical result back to everyone,
//! so the outcome never depends on message arrival order. Optimizer state
//! (natural-gradient statistics, schedule position) stays private to each
//! worker; only parameters are averaged.

use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use crate::data::{minibatches, Dataset, Minibatch};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::network::{cross_entropy, MlpModel, ParamVector};
use crate::optimizer::{apply_sgd, LrSchedule, NgConfig, NgState, OptimizerKind};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParallelPlan {
    pub workers: usize,
    /// Local minibatch updates between averaging events.
    pub avg_frequency: usize,
    pub minibatch_size: usize,
    pub base_seed: u64,
}

impl ParallelPlan {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("workers", self.workers),
            ("avg_frequency", self.avg_frequency),
            ("minibatch_size", self.minibatch_size),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub ng: NgConfig,
    /// Template copied into every worker. Its `lr_init` is used as given;
    /// any worker-count scaling happens before this point.
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub metrics: Vec<MetricsRecord>,
    /// Held-out accuracy of the starting model.
    pub initial_cv_accuracy: f64,
    pub stopped_early: bool,
}

/// Mean of the contributions, bitwise identical for every caller.
///
/// The sum is formed by a binary tree over ranks: the rank range is split at
/// the largest power of two below its length, both halves are reduced
/// recursively, and the halves are added elementwise. The result is divided
/// by `m` once at the end. Bitwise-identical contributions are returned
/// unchanged.
pub fn allreduce_average(contributions: &[ParamVector], m: usize) -> Result<ParamVector> {
    if contributions.len() != m || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "allreduce expected {m} contributions, got {}",
            contributions.len()
        )));
    }
    let len = contributions[0].len();
    if let Some((rank, c)) = contributions
        .iter()
        .enumerate()
        .find(|(_, c)| c.len() != len)
    {
        return Err(Error::ContributionLength {
            rank,
            expected: len,
            actual: c.len(),
        });
    }
    // Summing m equal values and dividing by m is not exact in floating point
    // for every m; agreement between workers must survive averaging unchanged.
    let first = &contributions[0].0;
    if contributions[1..].iter().all(|c| {
        c.0.iter()
            .zip(first)
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }) {
        return Ok(contributions[0].clone());
    }
    let slices: Vec<&[f64]> = contributions.iter().map(|c| c.as_slice()).collect();
    let mut sum = tree_sum(&slices);
    let denom = m as f64;
    sum.iter_mut().for_each(|v| *v /= denom);
    Ok(ParamVector(sum))
}

fn tree_sum(parts: &[&[f64]]) -> Vec<f64> {
    match parts.len() {
        1 => parts[0].to_vec(),
        n => {
            let split = n.next_power_of_two() / 2;
            let mut left = tree_sum(&parts[..split]);
            let right = tree_sum(&parts[split..]);
            for (a, b) in left.iter_mut().zip(&right) {
                *a += b;
            }
            left
        }
    }
}

/// One global seeded shuffle, then `m` contiguous shards of `⌊N/m⌋` rows.
/// The remainder is dropped.
pub fn partition_data(dataset: &Dataset, m: usize, seed: u64) -> Result<Vec<Dataset>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one shard".into()));
    }
    if m > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} examples across {m} workers",
            dataset.len()
        )));
    }
    let order = Rng::new(seed).permutation(dataset.len());
    let size = dataset.len() / m;
    Ok(order
        .chunks_exact(size)
        .take(m)
        .map(|idx| dataset.subset(idx))
        .collect())
}

/// Everything one worker owns.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub rank: usize,
    model: MlpModel,
    ng: Option<NgState>,
    schedule: LrSchedule,
    shard: Dataset,
    rng: Rng,
    minibatch_size: usize,
    updates_per_epoch: usize,
    local_updates: u64,
}

impl WorkerState {
    /// The worker's minibatch order is driven by `Rng::new(base_seed + rank)`.
    pub fn new(
        rank: usize,
        model: MlpModel,
        shard: Dataset,
        plan: &ParallelPlan,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if shard.len() < plan.minibatch_size {
            return Err(Error::InvalidArgument(format!(
                "worker {rank}: shard of {} examples is smaller than minibatch {}",
                shard.len(),
                plan.minibatch_size
            )));
        }
        let ng = match cfg.optimizer {
            OptimizerKind::Sgd => None,
            OptimizerKind::NaturalGradient => Some(NgState::new(&model, cfg.ng)?),
        };
        Ok(WorkerState {
            rank,
            ng,
            schedule: cfg.schedule.clone(),
            updates_per_epoch: shard.len() / plan.minibatch_size,
            shard,
            rng: Rng::new(plan.base_seed.wrapping_add(rank as u64)),
            minibatch_size: plan.minibatch_size,
            local_updates: 0,
            model,
        })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn local_updates(&self) -> u64 {
        self.local_updates
    }

    pub fn updates_per_epoch(&self) -> usize {
        self.updates_per_epoch
    }

    pub fn load_params(&mut self, params: &ParamVector) -> Result<()> {
        self.model.load_params(params.as_slice())
    }

    /// Fraction of the planned updates already taken.
    pub fn progress(&self) -> f64 {
        let planned = (self.updates_per_epoch * self.schedule.planned_epochs.max(1)) as f64;
        self.local_updates as f64 / planned
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at(self.progress())
    }

    /// Reshuffles the shard for a new epoch.
    pub fn begin_epoch(&mut self) -> Result<Vec<Minibatch>> {
        let epoch_seed = self.rng.next_u64();
        minibatches(&self.shard, self.minibatch_size, epoch_seed)
    }

    /// One local update. Returns the minibatch loss before the update.
    pub fn local_step(&mut self, batch: &Minibatch) -> Result<f64> {
        let trace = self.model.forward(&batch.features)?;
        let loss = cross_entropy(&trace, &batch.labels)?;
        let backprop = self.model.backprop(&trace, &batch.labels)?;
        let grads = match &mut self.ng {
            Some(ng) => {
                ng.update(&trace, &backprop.deltas)?;
                ng.precondition(&backprop.grads)?
            }
            None => backprop.grads,
        };
        let lr = self.current_lr();
        apply_sgd(&mut self.model, &grads, lr)?;
        self.local_updates += 1;
        Ok(loss)
    }

    /// Epoch-boundary schedule update. Returns `true` when training should stop.
    pub fn end_epoch(&mut self, prev_cv: f64, cv: f64) -> bool {
        self.schedule.end_epoch(prev_cv, cv)
    }
}

enum ToCoordinator {
    Contribution {
        rank: usize,
        params: ParamVector,
        loss_sum: f64,
        batches: usize,
        epoch_end: bool,
    },
    Failed {
        rank: usize,
        error: Error,
    },
}

#[derive(Clone)]
enum ToWorker {
    Averaged(Arc<ParamVector>),
    EpochDone {
        params: Arc<ParamVector>,
        prev_cv: f64,
        cv: f64,
        stop: bool,
    },
}

fn disconnected(rank: usize) -> Error {
    Error::InvalidArgument(format!("worker {rank}: coordinator went away"))
}

fn worker_loop(
    mut worker: WorkerState,
    epochs: usize,
    avg_frequency: usize,
    tx: &mpsc::Sender<ToCoordinator>,
    rx: &mpsc::Receiver<ToWorker>,
) -> Result<()> {
    let rank = worker.rank;
    for _ in 0..epochs {
        let batches = worker.begin_epoch()?;
        let mut since_avg = 0usize;
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        for (k, batch) in batches.iter().enumerate() {
            loss_sum += worker.local_step(batch)?;
            loss_batches += 1;
            since_avg += 1;
            let epoch_end = k + 1 == batches.len();
            if since_avg < avg_frequency && !epoch_end {
                continue;
            }
            since_avg = 0;
            // Losses travel once per epoch so the sum is grouped exactly as
            // in the serial loop.
            let (ls, lb) = if epoch_end {
                (loss_sum, loss_batches)
            } else {
                (0.0, 0)
            };
            tx.send(ToCoordinator::Contribution {
                rank,
                params: worker.model.flatten(),
                loss_sum: ls,
                batches: lb,
                epoch_end,
            })
            .map_err(|_| disconnected(rank))?;
            match rx.recv().map_err(|_| disconnected(rank))? {
                ToWorker::Averaged(params) => worker.load_params(&params)?,
                ToWorker::EpochDone {
                    params,
                    prev_cv,
                    cv,
                    stop,
                } => {
                    worker.load_params(&params)?;
                    let local_stop = worker.end_epoch(prev_cv, cv);
                    debug_assert_eq!(local_stop, stop);
                    if stop {
                        return Ok(());
                    }
                }
            }
        }
    }
    Ok(())
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into())
}

/// Trains with `plan.workers` model-averaging workers and returns the final
/// averaged model with one metrics record per completed epoch.
pub fn train_parallel(
    plan: &ParallelPlan,
    model0: &MlpModel,
    train: &Dataset,
    cv: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    plan.validate()?;
    let m = plan.workers;
    let shards = partition_data(train, m, plan.base_seed)?;
    let workers = shards
        .into_iter()
        .enumerate()
        .map(|(rank, shard)| WorkerState::new(rank, model0.clone(), shard, plan, cfg))
        .collect::<Result<Vec<_>>>()?;
    let initial_cv_accuracy = model0.accuracy(&cv.features, &cv.labels)?;

    let (to_coord, from_workers) = mpsc::channel::<ToCoordinator>();
    let mut to_workers = Vec::with_capacity(m);
    let mut inboxes = Vec::with_capacity(m);
    for _ in 0..m {
        let (tx, rx) = mpsc::channel::<ToWorker>();
        to_workers.push(tx);
        inboxes.push(rx);
    }

    thread::scope(|scope| {
        for (worker, inbox) in workers.into_iter().zip(inboxes) {
            let tx = to_coord.clone();
            let epochs = cfg.epochs;
            let n = plan.avg_frequency;
            scope.spawn(move || {
                let rank = worker.rank;
                let result = panic::catch_unwind(AssertUnwindSafe(|| {
                    worker_loop(worker, epochs, n, &tx, &inbox)
                }))
                .unwrap_or_else(|p| Err(Error::InvalidArgument(panic_message(p))));
                if let Err(error) = result {
                    let _ = tx.send(ToCoordinator::Failed { rank, error });
                }
            });
        }
        drop(to_coord);

        let mut coordinator = Coordinator {
            m,
            model: model0.clone(),
            schedule: cfg.schedule.clone(),
            prev_cv: initial_cv_accuracy,
            avg_events: 0,
            metrics: Vec::new(),
            epoch_start: Instant::now(),
        };
        let result = coordinator.run(cfg.epochs, cv, &from_workers, &to_workers);
        // Dropping the senders releases any worker still waiting after a failure.
        drop(to_workers);
        let stopped_early = result?;
        Ok(TrainOutcome {
            model: coordinator.model,
            metrics: coordinator.metrics,
            initial_cv_accuracy,
            stopped_early,
        })
    })
}

struct Coordinator {
    m: usize,
    model: MlpModel,
    schedule: LrSchedule,
    prev_cv: f64,
    avg_events: u64,
    metrics: Vec<MetricsRecord>,
    epoch_start: Instant,
}

impl Coordinator {
    /// Returns whether the schedule stopped training before the epoch cap.
    fn run(
        &mut self,
        epochs: usize,
        cv: &Dataset,
        inbox: &mpsc::Receiver<ToCoordinator>,
        outboxes: &[mpsc::Sender<ToWorker>],
    ) -> Result<bool> {
        let mut epoch = 0usize;
        let mut epoch_lr = self.schedule.lr_at(0.0);
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        self.epoch_start = Instant::now();
        while epoch < epochs {
            let mut slots: Vec<Option<ParamVector>> = vec![None; self.m];
            let mut epoch_end = false;
            let mut round_losses = vec![(0.0, 0usize); self.m];
            for _ in 0..self.m {
                match inbox.recv() {
                    Ok(ToCoordinator::Contribution {
                        rank,
                        params,
                        loss_sum: ls,
                        batches,
                        epoch_end: end,
                    }) => {
                        slots[rank] = Some(params);
                        round_losses[rank] = (ls, batches);
                        epoch_end = end;
                    }
                    Ok(ToCoordinator::Failed { rank, error }) => {
                        return Err(Error::WorkerFailed {
                            rank,
                            source: Box::new(error),
                        })
                    }
                    Err(_) => {
                        return Err(Error::InvalidArgument(
                            "all workers exited before training finished".into(),
                        ))
                    }
                }
            }
            // Rank order keeps the loss sum deterministic too.
            if epoch_end {
                let mut ranks = round_losses.into_iter();
                let (first, b0) = ranks.next().unwrap();
                loss_sum = first;
                loss_batches = b0;
                for (ls, b) in ranks {
                    loss_sum += ls;
                    loss_batches += b;
                }
            }
            let contributions: Vec<ParamVector> = slots.into_iter().map(Option::unwrap).collect();
            let averaged = Arc::new(allreduce_average(&contributions, self.m)?);
            self.avg_events += 1;

            let message = if epoch_end {
                let wall_seconds = self.epoch_start.elapsed().as_secs_f64();
                self.model.load_params(averaged.as_slice())?;
                let cv_acc = self.model.accuracy(&cv.features, &cv.labels)?;
                epoch += 1;
                self.metrics.push(MetricsRecord {
                    epoch,
                    lr: epoch_lr,
                    train_ce: loss_sum / loss_batches.max(1) as f64,
                    cv_accuracy: cv_acc,
                    wall_seconds,
                    workers: self.m,
                    avg_events: self.avg_events,
                });
                let prev_cv = self.prev_cv;
                let stop = self.schedule.end_epoch(prev_cv, cv_acc);
                self.prev_cv = cv_acc;
                ToWorker::EpochDone {
                    params: Arc::clone(&averaged),
                    prev_cv,
                    cv: cv_acc,
                    stop,
                }
            } else {
                ToWorker::Averaged(Arc::clone(&averaged))
            };
            let stop = matches!(message, ToWorker::EpochDone { stop: true, .. });
            for tx in outboxes {
                // A closed inbox means that worker already failed; its error
                // is still queued for us.
                let _ = tx.send(message.clone());
            }
            if stop {
                return Ok(true);
            }
            if epoch_end {
                epoch_lr = self.next_epoch_lr(epoch);
                self.epoch_start = Instant::now();
            }
        }
        Ok(false)
    }

    fn next_epoch_lr(&self, completed_epochs: usize) -> f64 {
        let planned = self.schedule.planned_epochs.max(1) as f64;
        self.schedule.lr_at(completed_epochs as f64 / planned)
    }
}

/// Single-process baseline: one worker, no averaging, the same minibatching,
/// schedule and optimizer code path as a parallel worker.
pub fn serial_train(
    model0: &MlpModel,
    train: &Dataset,
    cv: &Dataset,
    cfg: &TrainConfig,
    minibatch_size: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    let plan = ParallelPlan {
        workers: 1,
        avg_frequency: 1,
        minibatch_size,
        base_seed: seed,
    };
    plan.validate()?;
    let shard = partition_data(train, 1, seed)?.pop().unwrap();
    let mut worker = WorkerState::new(0, model0.clone(), shard, &plan, cfg)?;
    let initial_cv_accuracy = model0.accuracy(&cv.features, &cv.labels)?;
    let mut prev_cv = initial_cv_accuracy;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let lr = worker.current_lr();
        let batches = worker.begin_epoch()?;
        let mut loss_sum = 0.0;
        for batch in &batches {
            loss_sum += worker.local_step(batch)?;
        }
        let wall_seconds = start.elapsed().as_secs_f64();
        let cv_acc = worker.model.accuracy(&cv.features, &cv.labels)?;
        metrics.push(MetricsRecord {
            epoch,
            lr,
            train_ce: loss_sum / batches.len().max(1) as f64,
            cv_accuracy: cv_acc,
            wall_seconds,
            workers: 1,
            avg_events: 0,
        });
        let stop = worker.end_epoch(prev_cv, cv_acc);
        prev_cv = cv_acc;
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model: worker.model,
        metrics,
        initial_cv_accuracy,
        stopped_early,
    })
}
