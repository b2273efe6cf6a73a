//! Kronecker-factored natural-gradient preconditioning.
//!
//! For each layer the Fisher block is approximated by `R_out ⊗ R_in`, where
//! `R_in` is a running estimate of the layer-input second moment `E[a aᵀ]` and
//! `R_out` the same for the per-example loss derivatives at the layer's
//! pre-activations. The weight gradient is mapped to
//! `S_out⁻¹ · G · S_in⁻¹` with `S = R + λI`, `λ = smoothing · tr(R) / dim`,
//! and then rescaled to the Frobenius norm of `G` so the preconditioner only
//! changes direction, never step length.

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, matmul_tn, norm2, Cholesky, Matrix};
use crate::network::{ForwardTrace, GradientSet, LayerParams, MlpModel};

/// Lower bound on the ridge `λ`, which keeps `S` positive definite even when
/// `R` is still zero.
pub const LAMBDA_FLOOR: f64 = 1e-8;

const NORM_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgConfig {
    /// EMA decay `ρ` in (0, 1).
    pub decay: f64,
    /// Ridge scale `α_s` > 0 relative to the mean eigenvalue.
    pub smoothing: f64,
}

impl Default for NgConfig {
    fn default() -> Self {
        NgConfig {
            decay: 0.95,
            smoothing: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFactors {
    pub r_in: Matrix,
    pub r_out: Matrix,
}

impl LayerFactors {
    fn smoothed(r: &Matrix, smoothing: f64) -> Matrix {
        let dim = r.rows() as f64;
        let lambda = (smoothing * r.trace() / dim).max(LAMBDA_FLOOR);
        let mut s = r.clone();
        s.add_diagonal(lambda);
        s
    }

    /// `(S_in, S_out)` for the given smoothing.
    pub fn smoothed_factors(&self, smoothing: f64) -> (Matrix, Matrix) {
        (
            Self::smoothed(&self.r_in, smoothing),
            Self::smoothed(&self.r_out, smoothing),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgState {
    pub config: NgConfig,
    pub layers: Vec<LayerFactors>,
    pub update_count: u64,
}

impl NgState {
    /// Zero-history state shaped for `model`.
    pub fn new(model: &MlpModel, config: NgConfig) -> Result<Self> {
        if !(config.decay > 0.0 && config.decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "natural-gradient decay must lie in (0, 1), got {}",
                config.decay
            )));
        }
        if !(config.smoothing > 0.0) || !config.smoothing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "natural-gradient smoothing must be positive, got {}",
                config.smoothing
            )));
        }
        Ok(NgState {
            config,
            layers: model
                .layers()
                .iter()
                .map(|l| LayerFactors {
                    r_in: Matrix::zeros(l.d_in(), l.d_in()),
                    r_out: Matrix::zeros(l.d_out(), l.d_out()),
                })
                .collect(),
            update_count: 0,
        })
    }

    /// Folds one minibatch of statistics into the running estimates.
    ///
    /// `deltas[l]` holds per-example loss derivatives at layer `l`'s
    /// pre-activations. The first update replaces the zero state outright,
    /// which removes the EMA's start-up bias toward zero.
    pub fn update(&mut self, trace: &ForwardTrace, deltas: &[Matrix]) -> Result<()> {
        let batch = trace.batch_size();
        if batch == 0 {
            return Err(Error::InvalidArgument("empty minibatch".into()));
        }
        if deltas.len() != self.layers.len() || trace.depth() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "statistics for {} layers, state has {}",
                deltas.len(),
                self.layers.len()
            )));
        }
        let first = self.update_count == 0;
        let rho = self.config.decay;
        for (l, factors) in self.layers.iter_mut().enumerate() {
            let input = trace.layer_input(l);
            let delta = &deltas[l];
            if input.cols() != factors.r_in.rows()
                || delta.cols() != factors.r_out.rows()
                || input.rows() != batch
                || delta.rows() != batch
            {
                return Err(Error::ShapeMismatch {
                    op: "ng_update_state",
                    left: (factors.r_out.rows(), factors.r_in.rows()),
                    right: (delta.cols(), input.cols()),
                });
            }
            let mut in_stat = matmul_tn(input, input)?;
            in_stat.scale(1.0 / batch as f64);
            let mut out_stat = matmul_tn(delta, delta)?;
            out_stat.scale(1.0 / batch as f64);
            if first {
                factors.r_in = in_stat;
                factors.r_out = out_stat;
            } else {
                factors.r_in.scale(rho);
                factors.r_in.add_scaled(&in_stat, 1.0 - rho)?;
                factors.r_out.scale(rho);
                factors.r_out.add_scaled(&out_stat, 1.0 - rho)?;
            }
        }
        self.update_count += 1;
        Ok(())
    }

    /// Applies the preconditioner to every layer of `grads`.
    pub fn precondition(&self, grads: &GradientSet) -> Result<GradientSet> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient has {} layers, state has {}",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        let smoothing = self.config.smoothing;
        let layers = self
            .layers
            .iter()
            .zip(&grads.layers)
            .map(|(factors, g)| {
                let (s_in, s_out) = factors.smoothed_factors(smoothing);
                let chol_in = Cholesky::factor(&s_in)?;
                let chol_out = Cholesky::factor(&s_out)?;
                let mut weights = solve_both_sides(&chol_in, &chol_out, &g.weights)?;
                rescale(weights.as_mut_slice(), frobenius_norm(&g.weights));
                let mut bias = g.bias.clone();
                if bias.len() != chol_out.lower().rows() {
                    return Err(Error::ShapeMismatch {
                        op: "ng_precondition",
                        left: s_out.shape(),
                        right: (bias.len(), 1),
                    });
                }
                chol_out.solve_in_place(&mut bias);
                rescale(&mut bias, norm2(&g.bias));
                Ok(LayerParams { weights, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GradientSet { layers })
    }
}

fn solve_both_sides(chol_in: &Cholesky, chol_out: &Cholesky, g: &Matrix) -> Result<Matrix> {
    let left = chol_out.solve(g)?;
    chol_in.solve_right(&left)
}

fn rescale(values: &mut [f64], target_norm: f64) {
    let gamma = target_norm / norm2(values).max(NORM_FLOOR);
    values.iter_mut().for_each(|v| *v *= gamma);
}

/// Unscaled `S_out⁻¹ · G · S_in⁻¹` for explicit smoothed factors.
pub fn kronecker_solve(s_in: &Matrix, s_out: &Matrix, g: &Matrix) -> Result<Matrix> {
    solve_both_sides(&Cholesky::factor(s_in)?, &Cholesky::factor(s_out)?, g)
}

pub fn ng_update_state(
    state: &NgState,
    trace: &ForwardTrace,
    deltas: &[Matrix],
) -> Result<NgState> {
    let mut next = state.clone();
    next.update(trace, deltas)?;
    Ok(next)
}

pub fn ng_precondition(state: &NgState, grads: &GradientSet) -> Result<GradientSet> {
    state.precondition(grads)
}
