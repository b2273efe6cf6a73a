//! Greedy layer-wise RBM pretraining with one-step contrastive divergence.
//!
//! The first RBM sees real-valued (standardised) inputs and uses Gaussian
//! visible units with unit variance; every later RBM is Bernoulli–Bernoulli
//! and is trained on the hidden probabilities of the layer below.

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::network::{glorot_fill, sigmoid, Activation, LayerParams, MlpModel};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisibleKind {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// d_hidden × d_visible, the same orientation as an MLP layer.
    pub weights: Matrix,
    pub v_bias: Vec<f64>,
    pub h_bias: Vec<f64>,
    pub visible_kind: VisibleKind,
}

/// Draws binary hidden states from their probabilities.
pub trait HiddenSampler {
    fn sample(&mut self, p: f64) -> f64;
}

impl HiddenSampler for Rng {
    fn sample(&mut self, p: f64) -> f64 {
        if self.uniform() < p {
            1.0
        } else {
            0.0
        }
    }
}

/// Deterministic stand-in: a unit is on iff its probability is at least 0.5.
#[derive(Debug, Clone, Copy, Default)]
pub struct ThresholdSampler;

impl HiddenSampler for ThresholdSampler {
    fn sample(&mut self, p: f64) -> f64 {
        if p >= 0.5 {
            1.0
        } else {
            0.0
        }
    }
}

const INIT_STDDEV: f64 = 0.01;

impl RbmParams {
    /// Weights from N(0, 0.01²), zero biases.
    pub fn init_random(visible: usize, hidden: usize, kind: VisibleKind, rng: &mut Rng) -> Self {
        RbmParams {
            weights: Matrix::from_vec(
                hidden,
                visible,
                rng.gaussian_vec(hidden * visible, 0.0, INIT_STDDEV),
            )
            .expect("shape"),
            v_bias: vec![0.0; visible],
            h_bias: vec![0.0; hidden],
            visible_kind: kind,
        }
    }

    pub fn visible_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn hidden_probs(&self, visible: &Matrix) -> Result<Matrix> {
        let mut h = matmul_nt(visible, &self.weights)?;
        for r in 0..h.rows() {
            for (v, b) in h.row_mut(r).iter_mut().zip(&self.h_bias) {
                *v = sigmoid(*v + b);
            }
        }
        Ok(h)
    }

    /// Mean of the visible units given hidden states: linear for Gaussian
    /// visibles, logistic for Bernoulli.
    pub fn visible_mean(&self, hidden: &Matrix) -> Result<Matrix> {
        let mut v = matmul(hidden, &self.weights)?;
        let kind = self.visible_kind;
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(&self.v_bias) {
                *x += b;
                if kind == VisibleKind::Bernoulli {
                    *x = sigmoid(*x);
                }
            }
        }
        Ok(v)
    }

    /// Adds `lr · (positive − negative) / B` to every parameter, where the
    /// statistics are `h vᵀ` outer products and unit means.
    pub fn apply_statistics(
        &mut self,
        v_pos: &Matrix,
        h_pos: &Matrix,
        v_neg: &Matrix,
        h_neg: &Matrix,
        lr: f64,
    ) -> Result<()> {
        let batch = v_pos.rows() as f64;
        let pos = matmul_tn(h_pos, v_pos)?;
        let neg = matmul_tn(h_neg, v_neg)?;
        let scale = lr / batch;
        for ((w, p), n) in self
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(pos.as_slice())
            .zip(neg.as_slice())
        {
            *w += scale * (p - n);
        }
        for ((b, p), n) in self
            .v_bias
            .iter_mut()
            .zip(v_pos.column_sums())
            .zip(v_neg.column_sums())
        {
            *b += scale * (p - n);
        }
        for ((b, p), n) in self
            .h_bias
            .iter_mut()
            .zip(h_pos.column_sums())
            .zip(h_neg.column_sums())
        {
            *b += scale * (p - n);
        }
        Ok(())
    }

    /// One CD-1 step in place. Returns the mean squared reconstruction error
    /// per example.
    pub fn cd1_step(
        &mut self,
        batch: &Matrix,
        lr: f64,
        sampler: &mut impl HiddenSampler,
    ) -> Result<f64> {
        if batch.cols() != self.visible_dim() {
            return Err(Error::ShapeMismatch {
                op: "cd1_update",
                left: batch.shape(),
                right: self.weights.shape(),
            });
        }
        if batch.rows() == 0 {
            return Err(Error::InvalidArgument("empty RBM batch".into()));
        }
        let h0 = self.hidden_probs(batch)?;
        let mut h0_sample = h0.clone();
        h0_sample
            .as_mut_slice()
            .iter_mut()
            .for_each(|p| *p = sampler.sample(*p));
        let v1 = self.visible_mean(&h0_sample)?;
        let h1 = self.hidden_probs(&v1)?;
        let err = batch
            .as_slice()
            .iter()
            .zip(v1.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / batch.rows() as f64;
        self.apply_statistics(batch, &h0, &v1, &h1, lr)?;
        Ok(err)
    }

    pub fn reconstruction_error(&self, data: &Matrix) -> Result<f64> {
        let h = self.hidden_probs(data)?;
        let v = self.visible_mean(&h)?;
        Ok(data
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / data.rows().max(1) as f64)
    }
}

pub fn cd1_update(
    rbm: &RbmParams,
    batch: &Matrix,
    lr: f64,
    sampler: &mut impl HiddenSampler,
) -> Result<RbmParams> {
    let mut next = rbm.clone();
    next.cd1_step(batch, lr, sampler)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_gaussian: f64,
    pub lr_bernoulli: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            batch_size: 128,
            lr_gaussian: 0.001,
            lr_bernoulli: 0.1,
        }
    }
}

/// Trains one RBM for `epochs` passes over `data`. Returns the mean
/// per-step reconstruction error of each epoch.
pub fn train_rbm(
    rbm: &mut RbmParams,
    data: &Matrix,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let batch_size = batch_size.clamp(1, data.rows().max(1));
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let order = rng.permutation(data.rows());
        let mut total = 0.0;
        let mut steps = 0usize;
        for idx in order.chunks_exact(batch_size) {
            let batch = data.select_rows(idx);
            total += rbm.cd1_step(&batch, lr, rng)?;
            steps += 1;
        }
        history.push(total / steps.max(1) as f64);
    }
    Ok(history)
}

/// Pretrains one RBM per hidden layer of an MLP with sizes `dims`
/// (input, hidden…, output). The output layer gets no RBM.
pub fn pretrain_stack(
    dims: &[usize],
    data: &Matrix,
    cfg: &PretrainConfig,
    rng: &mut Rng,
) -> Result<Vec<RbmParams>> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "invalid layer sizes {dims:?}"
        )));
    }
    if data.cols() != dims[0] {
        return Err(Error::ShapeMismatch {
            op: "greedy_pretrain",
            left: data.shape(),
            right: (dims[0], dims[1]),
        });
    }
    let hidden = &dims[1..dims.len() - 1];
    let mut stack = Vec::with_capacity(hidden.len());
    let mut input = data.clone();
    let mut visible = dims[0];
    for (l, &h) in hidden.iter().enumerate() {
        let (kind, lr) = if l == 0 {
            (VisibleKind::Gaussian, cfg.lr_gaussian)
        } else {
            (VisibleKind::Bernoulli, cfg.lr_bernoulli)
        };
        let mut rbm = RbmParams::init_random(visible, h, kind, rng);
        train_rbm(&mut rbm, &input, cfg.epochs, cfg.batch_size, lr, rng)?;
        input = rbm.hidden_probs(&input)?;
        visible = h;
        stack.push(rbm);
    }
    Ok(stack)
}

/// Sigmoid MLP whose hidden layers come from a pretrained RBM stack and whose
/// output layer is Glorot-initialised.
pub fn greedy_pretrain(
    dims: &[usize],
    data: &Matrix,
    cfg: &PretrainConfig,
    rng: &mut Rng,
) -> Result<MlpModel> {
    let stack = pretrain_stack(dims, data, cfg, rng)?;
    let mut layers: Vec<LayerParams> = stack
        .into_iter()
        .map(|rbm| LayerParams {
            weights: rbm.weights,
            bias: rbm.h_bias,
        })
        .collect();
    let mut out = LayerParams::zeros(dims[dims.len() - 1], dims[dims.len() - 2]);
    glorot_fill(&mut out.weights, rng);
    layers.push(out);
    MlpModel::from_layers(Activation::Sigmoid, layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Standardizer, SyntheticSpec};

    fn hand_rbm() -> RbmParams {
        RbmParams {
            weights: Matrix::from_rows(&[[0.5, -0.25]]),
            v_bias: vec![0.1, -0.1],
            h_bias: vec![0.2],
            visible_kind: VisibleKind::Bernoulli,
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let rbm = hand_rbm();
        let batch = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let next = cd1_update(&rbm, &batch, 0.0, &mut Rng::new(1)).unwrap();
        assert_eq!(next, rbm);
    }

    #[test]
    fn identical_statistics_give_zero_update() {
        let mut rbm = hand_rbm();
        let v = Matrix::from_rows(&[[1.0, 0.0], [0.3, 0.9]]);
        let h = rbm.hidden_probs(&v).unwrap();
        let before = rbm.clone();
        rbm.apply_statistics(&v, &h, &v, &h, 0.7).unwrap();
        assert_eq!(rbm, before);
    }

    #[test]
    fn hand_computed_cd1_single_example() {
        let rbm = hand_rbm();
        let v0 = [1.0, 0.0];
        let lr = 0.1;
        let next = cd1_update(&rbm, &Matrix::from_rows(&[v0]), lr, &mut ThresholdSampler).unwrap();

        // Positive phase: h0 = σ(0.5·1 − 0.25·0 + 0.2) = σ(0.7) ≥ 0.5, so h0_sample = 1.
        let h0 = 1.0 / (1.0 + (-0.7f64).exp());
        // Reconstruction: v1 = σ(W·1 + b_v) = [σ(0.6), σ(−0.35)].
        let v1 = [
            1.0 / (1.0 + (-0.6f64).exp()),
            (-0.35f64).exp() / (1.0 + (-0.35f64).exp()),
        ];
        let h1 = 1.0 / (1.0 + (-(0.5 * v1[0] - 0.25 * v1[1] + 0.2f64)).exp());
        let dw = [
            lr * (h0 * v0[0] - h1 * v1[0]),
            lr * (h0 * v0[1] - h1 * v1[1]),
        ];
        let dbv = [lr * (v0[0] - v1[0]), lr * (v0[1] - v1[1])];
        let dbh = lr * (h0 - h1);

        assert_eq!(next.weights[(0, 0)], 0.5 + dw[0]);
        assert_eq!(next.weights[(0, 1)], -0.25 + dw[1]);
        assert_eq!(next.v_bias, vec![0.1 + dbv[0], -0.1 + dbv[1]]);
        assert_eq!(next.h_bias, vec![0.2 + dbh]);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let rbm = hand_rbm();
        assert!(matches!(
            cd1_update(&rbm, &Matrix::zeros(2, 3), 0.1, &mut ThresholdSampler),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    fn two_clusters(seed: u64) -> Matrix {
        let mut d = generate_synthetic(&SyntheticSpec {
            classes: 2,
            dim: 8,
            per_class: 100,
            separation: 4.0,
            seed,
        })
        .unwrap();
        Standardizer::fit(&d.features).apply(&mut d);
        d.features
    }

    #[test]
    fn reconstruction_error_falls() {
        for seed in 0..5 {
            let data = two_clusters(seed);
            let mut rng = Rng::new(100 + seed);
            let mut rbm = RbmParams::init_random(8, 6, VisibleKind::Gaussian, &mut rng);
            let history = train_rbm(&mut rbm, &data, 20, 20, 0.01, &mut rng).unwrap();
            assert!(
                history.last().unwrap() < history.first().unwrap(),
                "seed {seed}: {history:?}"
            );
        }
    }

    #[test]
    fn stack_shapes_and_zero_epochs() {
        let data = two_clusters(1);
        let dims = [8, 6, 5, 3];
        let cfg = PretrainConfig {
            epochs: 0,
            ..PretrainConfig::default()
        };
        let stack = pretrain_stack(&dims, &data, &cfg, &mut Rng::new(4)).unwrap();
        assert_eq!(stack.len(), dims.len() - 2);
        assert_eq!(stack[0].visible_kind, VisibleKind::Gaussian);
        assert_eq!(stack[1].visible_kind, VisibleKind::Bernoulli);
        assert_eq!(stack[1].visible_dim(), stack[0].hidden_dim());

        // With no training the hidden layers are exactly the RBM initial draws.
        let mut rng = Rng::new(4);
        let first = RbmParams::init_random(8, 6, VisibleKind::Gaussian, &mut rng);
        let second = RbmParams::init_random(6, 5, VisibleKind::Bernoulli, &mut rng);
        let model = greedy_pretrain(&dims, &data, &cfg, &mut Rng::new(4)).unwrap();
        assert_eq!(model.layers()[0].weights, first.weights);
        assert_eq!(model.layers()[1].weights, second.weights);
        assert_eq!(model.layer_dims(), &dims);
        assert!(model.layers()[2]
            .weights
            .as_slice()
            .iter()
            .any(|&w| w != 0.0));
    }

    #[test]
    fn pretraining_is_deterministic() {
        let data = two_clusters(2);
        let cfg = PretrainConfig {
            epochs: 2,
            batch_size: 16,
            ..PretrainConfig::default()
        };
        let a = greedy_pretrain(&[8, 4, 2], &data, &cfg, &mut Rng::new(5)).unwrap();
        let b = greedy_pretrain(&[8, 4, 2], &data, &cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
