//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use mavg::data::{generate_synthetic, Dataset, SyntheticSpec};
use mavg::linalg::Matrix;
use mavg::network::{Activation, MlpModel, ParamVector};
use mavg::optimizer::{LrSchedule, NgConfig, OptimizerKind, ScheduleKind};
use mavg::parallel::{partition_data, train_parallel, ParallelPlan, TrainConfig};
use mavg::rng::Rng;

/// Mean cross-entropy computed with plain loops over the parameters, sharing
/// no code with the library's forward pass.
pub fn naive_loss(model: &MlpModel, x: &Matrix, labels: &[usize]) -> f64 {
    let act = |v: f64| match model.activation() {
        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        Activation::Tanh => v.tanh(),
    };
    let layers = model.layers();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let mut a: Vec<f64> = x.row(r).to_vec();
        for (l, layer) in layers.iter().enumerate() {
            let mut z = vec![0.0; layer.d_out()];
            for (o, zo) in z.iter_mut().enumerate() {
                *zo = layer.bias[o];
                for (i, ai) in a.iter().enumerate() {
                    *zo += layer.weights[(o, i)] * ai;
                }
            }
            a = if l + 1 == layers.len() {
                z
            } else {
                z.into_iter().map(act).collect()
            };
        }
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - a[y];
    }
    total / labels.len() as f64
}

pub fn random_batch(
    rng: &mut Rng,
    rows: usize,
    dim: usize,
    classes: usize,
) -> (Matrix, Vec<usize>) {
    let x = Matrix::from_vec(rows, dim, rng.gaussian_vec(rows * dim, 0.0, 1.0)).unwrap();
    let y = (0..rows).map(|_| rng.below(classes)).collect();
    (x, y)
}

/// Largest relative deviation between backprop and central differences over
/// every parameter. The denominator is floored so entries that are zero in
/// both gradients compare absolutely.
pub fn finite_difference_error(model: &MlpModel, x: &Matrix, y: &[usize], eps: f64) -> f64 {
    let analytic = model
        .backward(&model.forward(x).unwrap(), y)
        .unwrap()
        .flatten();
    let base = model.flatten();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &g) in analytic.iter().enumerate() {
        let mut p = base.0.clone();
        p[k] = base.0[k] + eps;
        probe.load_params(&p).unwrap();
        let up = naive_loss(&probe, x, y);
        p[k] = base.0[k] - eps;
        probe.load_params(&p).unwrap();
        let down = naive_loss(&probe, x, y);
        let numeric = (up - down) / (2.0 * eps);
        let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

/// Left-to-right arithmetic mean.
pub fn sequential_mean(vs: &[ParamVector]) -> Vec<f64> {
    let mut acc = vec![0.0; vs[0].len()];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    acc.iter().map(|a| a / vs.len() as f64).collect()
}

/// `‖a − b‖∞ / ‖b‖∞`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn small_task(classes: usize, dim: usize, per_class: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        classes,
        dim,
        per_class,
        separation: 2.5,
        seed,
    })
    .unwrap()
}

pub fn sgd_config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        optimizer: OptimizerKind::Sgd,
        ng: NgConfig::default(),
        schedule: LrSchedule::new(ScheduleKind::Exponential, lr, epochs.max(1)),
    }
}

/// One frequency-1 trial: `m = 4` workers, each shard exactly one
/// minibatch, one epoch of plain SGD, so training is a single local step
/// followed by a single average. Compared against the explicit
/// gradient-averaged step `θ₀ − lr · mean_k ∇L_k(θ₀)` computed from the
/// shards directly. Returns the relative max-norm deviation.
pub fn frequency_one_trial(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let m = 4;
    let batch = 2 + rng.below(5);
    let dim = 2 + rng.below(4);
    let classes = 2 + rng.below(3);
    let hidden = 2 + rng.below(5);
    let activation = if rng.below(2) == 0 {
        Activation::Sigmoid
    } else {
        Activation::Tanh
    };
    let (x, y) = random_batch(&mut rng, m * batch, dim, classes);
    let train = Dataset::new(x, y, classes).unwrap();
    let model0 = MlpModel::init_random(&[dim, hidden, classes], activation, &mut rng).unwrap();
    let lr = 0.05 + rng.uniform();
    let plan = ParallelPlan {
        workers: m,
        avg_frequency: 1,
        minibatch_size: batch,
        base_seed: rng.next_u64(),
    };
    let cv = train.subset(&[0]);
    let out = train_parallel(&plan, &model0, &train, &cv, &sgd_config(1, lr)).unwrap();

    let shards = partition_data(&train, m, plan.base_seed).unwrap();
    let mut mean_grad = vec![0.0; model0.num_params()];
    for shard in &shards {
        let g = model0
            .backward(&model0.forward(&shard.features).unwrap(), &shard.labels)
            .unwrap()
            .flatten();
        for (a, b) in mean_grad.iter_mut().zip(&g) {
            *a += b / m as f64;
        }
    }
    let expected: Vec<f64> = model0
        .flatten()
        .0
        .iter()
        .zip(&mean_grad)
        .map(|(p, g)| p - lr * g)
        .collect();
    max_rel_diff(out.model.flatten().as_slice(), &expected)
}

/// Largest deviation of the tree all-reduce from the left-to-right mean over
/// `m` random vectors of `len` entries, relative to `max(1, |mean|)`.
pub fn allreduce_error(m: usize, len: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let vs: Vec<ParamVector> = (0..m)
        .map(|_| ParamVector(rng.gaussian_vec(len, 0.0, 1.0)))
        .collect();
    let tree = mavg::parallel::allreduce_average(&vs, m).unwrap();
    let seq = sequential_mean(&vs);
    tree.as_slice()
        .iter()
        .zip(&seq)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn ng_model(seed: u64) -> MlpModel {
    MlpModel::init_random(&[6, 10, 7, 4], Activation::Sigmoid, &mut Rng::new(seed)).unwrap()
}

/// Feeds `updates` random minibatches into a fresh state.
pub fn ng_state_after(model: &MlpModel, updates: usize, rng: &mut Rng) -> mavg::optimizer::NgState {
    let mut state = mavg::optimizer::NgState::new(model, NgConfig::default()).unwrap();
    for _ in 0..updates {
        let rows = 1 + rng.below(8);
        let (x, y) = random_batch(rng, rows, model.input_dim(), model.num_classes());
        let trace = model.forward(&x).unwrap();
        let bp = model.backprop(&trace, &y).unwrap();
        state.update(&trace, &bp.deltas).unwrap();
    }
    state
}

/// Worst per-layer relative mismatch between preconditioned and raw
/// gradient norms (weights and biases separately).
pub fn ng_norm_error(seed: u64, updates: usize) -> f64 {
    let model = ng_model(seed);
    let mut rng = Rng::new(seed ^ 0x5eed);
    let state = ng_state_after(&model, updates, &mut rng);
    let (x, y) = random_batch(&mut rng, 8, model.input_dim(), model.num_classes());
    let g = model.backward(&model.forward(&x).unwrap(), &y).unwrap();
    let p = state.precondition(&g).unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut worst = 0.0f64;
    for (gl, pl) in g.layers.iter().zip(&p.layers) {
        for (a, b) in [
            (norm(gl.weights.as_slice()), norm(pl.weights.as_slice())),
            (norm(&gl.bias), norm(&pl.bias)),
        ] {
            if a > 0.0 {
                worst = worst.max((a - b).abs() / a);
            }
        }
    }
    worst
}

/// Smallest `xᵀSx / xᵀx` over `probes` random directions and every smoothed
/// factor after `updates` random updates.
pub fn ng_min_quadratic_form(seed: u64, updates: usize, probes: usize) -> f64 {
    let model = ng_model(seed);
    let mut rng = Rng::new(seed ^ 0xfac7);
    let state = ng_state_after(&model, updates, &mut rng);
    let mut min = f64::INFINITY;
    for f in &state.layers {
        let (s_in, s_out) = f.smoothed_factors(state.config.smoothing);
        for s in [s_in, s_out] {
            let n = s.rows();
            for _ in 0..probes {
                let x = rng.gaussian_vec(n, 0.0, 1.0);
                let mut q = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        q += x[i] * s[(i, j)] * x[j];
                    }
                }
                min = min.min(q / x.iter().map(|v| v * v).sum::<f64>());
            }
        }
    }
    min
}

/// Deviation of a never-updated preconditioner from the identity map.
pub fn ng_cold_start_error(seed: u64) -> f64 {
    let model = ng_model(seed);
    let mut rng = Rng::new(seed);
    let state = ng_state_after(&model, 0, &mut rng);
    let (x, y) = random_batch(&mut rng, 5, model.input_dim(), model.num_classes());
    let g = model.backward(&model.forward(&x).unwrap(), &y).unwrap();
    let p = state.precondition(&g).unwrap();
    max_rel_diff(&p.flatten(), &g.flatten())
}
