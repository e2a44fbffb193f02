//! Training objectives and the Adam optimizer.

use hidflow_tensor::{Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{HidError, Result};
use crate::flow::FlowTrace;
use crate::params::ParameterStore;

/// `½·log(2π)`.
pub const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Loss weights and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lambda_nll: f64,
    pub lambda_rec: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lambda_nll: 0.001,
            lambda_rec: 1.0,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HidError::Config(m.to_string()));
        if !(self.lambda_nll >= 0.0 && self.lambda_rec >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        Ok(())
    }
}

/// Negative log-likelihood under a standard normal latent:
/// `½‖z‖² + (D/2)·log 2π − logdet`.
///
/// Fails with [`HidError::NonFinite`] naming the first layer whose output or
/// log-determinant is not finite.
pub fn nll_loss<'t, T: Real>(trace: &FlowTrace<'t, T>) -> Result<Var<'t, T>> {
    let d = trace.z.numel() as f64;
    let loss = trace
        .z
        .square()?
        .sum()?
        .mul_scalar(0.5)?
        .sub(trace.logdet)?
        .add_scalar(d * HALF_LOG_TWO_PI)?;
    if loss.item()?.is_finite() {
        return Ok(loss);
    }
    for layer in &trace.layers {
        if !layer.output.with_value(|t| t.all_finite()) {
            return Err(HidError::NonFinite {
                quantity: "activation",
                layer: layer.name.clone(),
            });
        }
        if let Some(ld) = layer.logdet {
            if !ld.item()?.is_finite() {
                return Err(HidError::NonFinite {
                    quantity: "log-determinant",
                    layer: layer.name.clone(),
                });
            }
        }
    }
    Err(HidError::NonFinite {
        quantity: "loss",
        layer: "nll".into(),
    })
}

/// Mean absolute error.
pub fn rec_loss<'t, T: Real>(x_hat: Var<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(x_hat.sub(x)?.abs()?.mean()?)
}

/// `λ₁·nll + λ₂·rec`.
pub fn total_loss<'t, T: Real>(
    nll: Var<'t, T>,
    rec: Var<'t, T>,
    cfg: &OptimConfig,
) -> Result<Var<'t, T>> {
    Ok(nll
        .mul_scalar(cfg.lambda_nll)?
        .add(rec.mul_scalar(cfg.lambda_rec)?)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient was not finite; nothing was changed.
    Skipped {
        parameter: String,
    },
}

/// One bias-corrected Adam update. `grads` is indexed like the store.
pub fn adam_step<T: Real>(
    store: &mut ParameterStore<T>,
    grads: &[Tensor<T>],
    cfg: &OptimConfig,
) -> Result<StepOutcome> {
    if grads.len() != store.len() {
        return Err(HidError::Config(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (&id, g) in ids.iter().zip(grads) {
        if g.shape() != store.value(id).shape() {
            return Err(HidError::Config(format!(
                "gradient for `{}` has shape {:?}, parameter has {:?}",
                store.name(id),
                g.shape(),
                store.value(id).shape()
            )));
        }
        if !g.all_finite() {
            let parameter = store.name(id).to_string();
            log::warn!("skipping optimizer step: non-finite gradient for `{parameter}`");
            return Ok(StepOutcome::Skipped { parameter });
        }
    }
    let t = store.step() + 1;
    let c = |v: f64| T::from_f64_lossy(v);
    let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
    let (one_b1, one_b2) = (c(1.0 - cfg.beta1), c(1.0 - cfg.beta2));
    let bc1 = c(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = c(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (c(cfg.lr), c(cfg.eps));
    for (&id, g) in ids.iter().zip(grads) {
        let (m0, v0) = store.moments(id);
        let m = m0.zip_map(g, "adam", |m, g| b1 * m + one_b1 * g)?;
        let v = v0.zip_map(g, "adam", |v, g| b2 * v + one_b2 * g * g)?;
        let update = m.zip_map(&v, "adam", |m, v| lr * (m / bc1) / ((v / bc2).sqrt() + eps))?;
        let value = store.value(id).zip_map(&update, "adam", |p, u| p - u)?;
        store.set_value(id, value)?;
        store.set_moments(id, m, v)?;
    }
    store.set_step(t);
    Ok(StepOutcome::Applied)
}
