use crate::error::{Error, Result};
use crate::network::{GradientSet, MlpModel};

/// Descent step `p ← p − lr·∇loss(p)` on every parameter, in place.
pub fn apply_sgd(model: &mut MlpModel, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    if grads.layers.len() != model.layers().len() {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} layers, model has {}",
            grads.layers.len(),
            model.layers().len()
        )));
    }
    for (l, (layer, g)) in model.layers().iter().zip(&grads.layers).enumerate() {
        if layer.weights.shape() != g.weights.shape() || layer.bias.len() != g.bias.len() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: layer.weights.shape(),
                right: g.weights.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { layer: l });
        }
    }
    for (layer, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
        for (p, d) in layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(g.weights.as_slice())
        {
            *p -= lr * d;
        }
        for (p, d) in layer.bias.iter_mut().zip(&g.bias) {
            *p -= lr * d;
        }
    }
    Ok(())
}

pub fn sgd_step(model: &MlpModel, grads: &GradientSet, lr: f64) -> Result<MlpModel> {
    let mut next = model.clone();
    apply_sgd(&mut next, grads, lr)?;
    Ok(next)
}
