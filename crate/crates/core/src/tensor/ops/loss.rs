//! Cross-entropy losses.
//!
//! The classifier loss is the binary-form categorical cross-entropy taken
//! over all class slots, not just the hot one:
//!
//! ```text
//! L = -1/N * sum_i [ y_i ln(p_i) + (1 - y_i) ln(1 - p_i) ]
//! ```
//!
//! with `N` equal to the number of classes. Predictions are clamped to
//! `[LOG_CLAMP_EPS, 1 - LOG_CLAMP_EPS]` before the logarithms.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp bound keeping `ln` finite on saturated probabilities.
pub const LOG_CLAMP_EPS: f32 = 1e-7;

fn clamp_prob(p: f32) -> f32 {
    p.clamp(LOG_CLAMP_EPS, 1.0 - LOG_CLAMP_EPS)
}

fn check_one_hot(op: &'static str, targets: &Tensor) -> Result<usize> {
    let mut hot = None;
    for (i, &t) in targets.data().iter().enumerate() {
        if t == 1.0 {
            if hot.is_some() {
                return Err(Error::param(op, "targets have more than one slot set to 1"));
            }
            hot = Some(i);
        } else if t != 0.0 {
            return Err(Error::param(
                op,
                format!("target slot {i} is {t}; one-hot targets must be exactly 0 or 1"),
            ));
        }
    }
    hot.ok_or_else(|| Error::param(op, "targets have no slot set to 1"))
}

/// Binary-form categorical cross-entropy for a single one-hot sample.
/// Every slot contributes: the hot slot through `ln(p)`, the cold slots
/// through `ln(1 - p)`. The mean divides by the slot count.
pub fn categorical_cross_entropy(predictions: &Tensor, targets: &Tensor) -> Result<f32> {
    crate::tensor::expect_shape("categorical_cross_entropy", targets, predictions.shape())?;
    check_one_hot("categorical_cross_entropy", targets)?;
    let n = predictions.data().len();
    let mut acc = 0.0f64;
    for (&p, &t) in predictions.data().iter().zip(targets.data()) {
        let p = clamp_prob(p) as f64;
        acc += if t == 1.0 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok((-acc / n as f64) as f32)
}

/// Gradient of [`categorical_cross_entropy`] with respect to the predictions.
/// Slots pinned by the clamp get zero gradient.
pub fn categorical_cross_entropy_backward(predictions: &Tensor, targets: &Tensor) -> Result<Tensor> {
    crate::tensor::expect_shape("categorical_cross_entropy_backward", targets, predictions.shape())?;
    check_one_hot("categorical_cross_entropy_backward", targets)?;
    let n = predictions.data().len() as f64;
    let gin = predictions
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| {
            if p < LOG_CLAMP_EPS || p > 1.0 - LOG_CLAMP_EPS {
                return 0.0;
            }
            let p = p as f64;
            let term = if t == 1.0 { 1.0 / p } else { -1.0 / (1.0 - p) };
            (-term / n) as f32
        })
        .collect();
    Tensor::new(predictions.shape().to_vec(), gin)
}

/// Elementwise binary cross-entropy averaged over every element. Targets may
/// be soft values in `[0, 1]`; used for mask supervision.
pub fn binary_cross_entropy_mean(predictions: &Tensor, targets: &Tensor) -> Result<f32> {
    crate::tensor::expect_shape("binary_cross_entropy_mean", targets, predictions.shape())?;
    for (i, &t) in targets.data().iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::param(
                "binary_cross_entropy_mean",
                format!("target element {i} is {t}; expected a value in [0, 1]"),
            ));
        }
    }
    let n = predictions.data().len();
    if n == 0 {
        return Err(Error::shape("binary_cross_entropy_mean", "non-empty tensor", "[0]"));
    }
    let mut acc = 0.0f64;
    for (&p, &t) in predictions.data().iter().zip(targets.data()) {
        let p = clamp_prob(p) as f64;
        let t = t as f64;
        acc += t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok((-acc / n as f64) as f32)
}

/// Gradient of [`binary_cross_entropy_mean`] with respect to the predictions.
pub fn binary_cross_entropy_mean_backward(predictions: &Tensor, targets: &Tensor) -> Result<Tensor> {
    crate::tensor::expect_shape("binary_cross_entropy_mean_backward", targets, predictions.shape())?;
    let n = predictions.data().len() as f64;
    let gin = predictions
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| {
            if p < LOG_CLAMP_EPS || p > 1.0 - LOG_CLAMP_EPS {
                return 0.0;
            }
            let p = p as f64;
            let t = t as f64;
            ((-(t / p) + (1.0 - t) / (1.0 - p)) / n) as f32
        })
        .collect();
    Tensor::new(predictions.shape().to_vec(), gin)
}
