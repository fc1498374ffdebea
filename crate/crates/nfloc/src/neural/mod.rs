//! Minimal dense-network engine for the two residual-correction
//! sub-networks.
//!
//! Each sub-network is `dense -> LayerNorm -> GELU -> dropout` three
//! times (256 -> 128 -> 64) followed by a 1-unit dense layer and Tanh,
//! scaled to physical units by `output_scale`. Training minimizes Wing
//! loss on unit-normalized residuals with hand-rolled backprop and an
//! Adam-style optimizer; everything is deterministic per seed.

mod mlp;
mod train;

pub use mlp::{load_model, save_model, Gradients, MlpModel, ModelKind, MODEL_FORMAT_VERSION};
pub use train::{train, EpochStats, TrainConfig, TrainLog};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hidden-layer widths of both sub-networks.
pub const HIDDEN_DIMS: [usize; 3] = [256, 128, 64];

/// Wing loss parameters. `continuity` is the constant C that stitches
/// the logarithmic and linear regions together.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WingLossParams {
    pub width: f64,
    pub epsilon: f64,
    pub continuity: f64,
}

impl WingLossParams {
    pub fn new(width: f64, epsilon: f64) -> Result<Self> {
        if width <= 0.0 || epsilon <= 0.0 {
            return Err(Error::InvalidConfiguration(format!(
                "wing loss needs positive (w, epsilon), got ({width}, {epsilon})"
            )));
        }
        Ok(Self { width, epsilon, continuity: width - width * (1.0 + width / epsilon).ln() })
    }
}

impl Default for WingLossParams {
    /// Defaults sized for unit-normalized residuals in (-1, 1).
    fn default() -> Self {
        Self::new(1.0, 0.05).unwrap()
    }
}

/// Wing loss and its derivative with respect to the prediction:
/// logarithmic within `width` of the target, linear outside.
pub fn wing_loss(pred: f64, target: f64, params: &WingLossParams) -> (f64, f64) {
    let d = pred - target;
    let abs = d.abs();
    let sign = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    if abs < params.width {
        let loss = params.width * (1.0 + abs / params.epsilon).ln();
        (loss, sign * params.width / (params.epsilon + abs))
    } else {
        (abs - params.continuity, sign)
    }
}

/// Exact (Gaussian-CDF) GELU.
pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

/// Derivative of exact GELU: `Phi(x) + x phi(x)`.
pub fn gelu_derivative(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    std_normal_cdf(x) + x * pdf
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wing_loss_zero_at_target() {
        let p = WingLossParams::default();
        let (loss, grad) = wing_loss(0.3, 0.3, &p);
        assert_eq!(loss, 0.0);
        assert_eq!(grad, 0.0);
    }

    #[test]
    fn wing_loss_continuous_at_branch_point() {
        let p = WingLossParams::new(1.0, 0.05).unwrap();
        let (log_side, _) = wing_loss(1.0 - 1e-12, 0.0, &p);
        let (lin_side, _) = wing_loss(1.0, 0.0, &p);
        assert!((log_side - lin_side).abs() < 1e-9);
        // Both branches give w ln(1 + w/eps) at |d| = w.
        let expected = 1.0 * (1.0 + 1.0 / 0.05f64).ln();
        assert!((lin_side - expected).abs() < 1e-12);
    }

    #[test]
    fn wing_loss_matches_hand_value_in_linear_region() {
        // w=1, eps=0.05, d=2: C = 1 - ln(21) so loss = 2 - C = 1 + ln(21).
        let p = WingLossParams::new(1.0, 0.05).unwrap();
        let (loss, grad) = wing_loss(2.0, 0.0, &p);
        let expected = 2.0 - (1.0 - 21.0f64.ln());
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 4.044522437723423).abs() < 1e-9);
        assert_eq!(grad, 1.0);
    }

    #[test]
    fn wing_gradient_matches_finite_difference() {
        let p = WingLossParams::new(0.8, 0.1).unwrap();
        for &d in &[-1.5, -0.5, -0.01, 0.02, 0.4, 1.2] {
            let (_, grad) = wing_loss(d, 0.0, &p);
            let h = 1e-7;
            let (lp, _) = wing_loss(d + h, 0.0, &p);
            let (lm, _) = wing_loss(d - h, 0.0, &p);
            let fd = (lp - lm) / (2.0 * h);
            assert!((grad - fd).abs() < 1e-6, "d={d}: {grad} vs {fd}");
        }
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // gelu(1) = 1 * Phi(1) = 0.841344746...
        assert!((gelu(1.0) - 0.8413447460685429).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.15865525393145707).abs() < 1e-12);
        for &x in &[-3.0, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_derivative(x) - fd).abs() < 1e-8);
        }
    }
}
