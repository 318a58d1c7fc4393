//! Elementwise activations and the softmax output layer.

use crate::error::Result;
use crate::tensor::kernels::{dot_wide, sum_wide};
use crate::tensor::Tensor;

/// `max(0, x)` elementwise. Shape is preserved.
pub fn relu(input: &Tensor) -> Result<Tensor> {
    let out = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), out)
}

/// Gradient of [`relu`]: passes `out_grad` where the pre-activation input was
/// strictly positive, zero elsewhere (including exactly at zero).
pub fn relu_backward(input: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
    crate::tensor::expect_shape("relu_backward", out_grad, input.shape())?;
    let gin = input
        .data()
        .iter()
        .zip(out_grad.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), gin)
}

/// `1 / (1 + e^-x)` elementwise, computed in f64.
pub fn sigmoid(input: &Tensor) -> Result<Tensor> {
    let out = input
        .data()
        .iter()
        .map(|&v| (1.0 / (1.0 + (-(v as f64)).exp())) as f32)
        .collect();
    Tensor::new(input.shape().to_vec(), out)
}

/// Gradient of [`sigmoid`] given the already computed activation `output`:
/// `g * s * (1 - s)`.
pub fn sigmoid_backward(output: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
    crate::tensor::expect_shape("sigmoid_backward", out_grad, output.shape())?;
    let gin = output
        .data()
        .iter()
        .zip(out_grad.data())
        .map(|(&s, &g)| {
            let s = s as f64;
            (g as f64 * s * (1.0 - s)) as f32
        })
        .collect();
    Tensor::new(output.shape().to_vec(), gin)
}

/// Softmax over a flat vector. The running maximum is subtracted before
/// exponentiation so large logits cannot overflow; exponentials and the
/// normalizer are kept in f64 until the final store.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    let x = input.data();
    if x.is_empty() {
        return Err(crate::error::Error::shape("softmax", "non-empty vector", "[0]"));
    }
    let mut max = f32::NEG_INFINITY;
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let exps: Vec<f32> = x.iter().map(|&v| ((v - max) as f64).exp() as f32).collect();
    let denom = sum_wide(&exps);
    let out = exps.iter().map(|&e| (e as f64 / denom) as f32).collect();
    Tensor::new(input.shape().to_vec(), out)
}

/// Gradient of [`softmax`] given its activation `output`:
/// `g_i = s_i * (og_i - sum_j og_j s_j)`.
pub fn softmax_backward(output: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
    crate::tensor::expect_shape("softmax_backward", out_grad, output.shape())?;
    let s = output.data();
    let og = out_grad.data();
    let inner = dot_wide(og, s);
    let gin = s
        .iter()
        .zip(og)
        .map(|(&si, &gi)| (si as f64 * (gi as f64 - inner)) as f32)
        .collect();
    Tensor::new(output.shape().to_vec(), gin)
}
