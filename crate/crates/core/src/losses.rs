//! Loss functions, their gradients in theta, and the bounded loss that
//! feeds the multiplicative-weight update.
//!
//! The SGD step uses the raw regularized gradient; only the weight update
//! sees the clamped loss, so the exponential-weights analysis applies while
//! the parameter updates remain standard least squares.

use crate::error::{Error, Result};
use crate::kernels::FeatureVector;
use serde::{Deserialize, Serialize};

/// Cost functions. The experiments are regression-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Cost {
    #[default]
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub cost: Cost,
    /// Regularization coefficient lambda >= 0. Defaults to 0.
    pub lambda: f64,
    /// Clamp the weight-update loss to [0, 1].
    pub clip_for_weights: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            cost: Cost::SquaredError,
            lambda: 0.0,
            clip_for_weights: true,
        }
    }
}

impl LossConfig {
    pub fn new(lambda: f64, clip_for_weights: bool) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be nonnegative and finite, got {lambda}"
            )));
        }
        Ok(Self {
            cost: Cost::SquaredError,
            lambda,
            clip_for_weights,
        })
    }
}

/// Regularized loss `(pred - label)^2 + lambda ||theta||^2`.
pub fn loss(pred: f64, label: f64, theta: &[f64], cfg: &LossConfig) -> Result<f64> {
    if !pred.is_finite() || !label.is_finite() {
        return Err(Error::Numeric(format!(
            "loss inputs must be finite: pred={pred} label={label}"
        )));
    }
    let Cost::SquaredError = cfg.cost;
    let err = pred - label;
    let reg = if cfg.lambda > 0.0 {
        cfg.lambda * theta.iter().map(|t| t * t).sum::<f64>()
    } else {
        0.0
    };
    Ok(err * err + reg)
}

/// Gradient of the regularized loss in theta: `2 (theta'z - y) z + 2 lambda theta`.
pub fn loss_grad_theta(
    z: &FeatureVector,
    theta: &[f64],
    label: f64,
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let residual = z.dot(theta)? - label;
    let Cost::SquaredError = cfg.cost;
    Ok(z.values
        .iter()
        .zip(theta)
        .map(|(zi, ti)| 2.0 * residual * zi + 2.0 * cfg.lambda * ti)
        .collect())
}

/// Squared error clamped to [0, 1] when clipping is enabled; this is the
/// only loss the weight update ever sees.
pub fn bounded_loss(pred: f64, label: f64, cfg: &LossConfig) -> f64 {
    let err = pred - label;
    let sq = err * err;
    if cfg.clip_for_weights {
        sq.clamp(0.0, 1.0)
    } else {
        sq
    }
}
