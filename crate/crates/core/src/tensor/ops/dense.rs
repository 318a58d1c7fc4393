//! Fully connected layer.

use crate::error::{Error, Result};
use crate::tensor::kernels::{axpy_wide, dot_wide};
use crate::tensor::Tensor;

fn dense_dims(op: &'static str, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let ws = weights.shape();
    if ws.len() != 2 {
        return Err(Error::shape(op, "weights [M, N]", format!("{ws:?}")));
    }
    let (m, n) = (ws[0], ws[1]);
    if input.shape() != [n] {
        return Err(Error::shape(op, format!("input [{n}]"), format!("{:?}", input.shape())));
    }
    if bias.shape() != [m] {
        return Err(Error::shape(op, format!("bias [{m}]"), format!("{:?}", bias.shape())));
    }
    Ok((m, n))
}

/// `y = W x + b` with `W: [M, N]` (row-major, one row per output unit),
/// `x: [N]`, `b: [M]`. Each row product accumulates in f64.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dense_dims("dense", input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let b = bias.data();
    let mut out = vec![0.0f32; m];
    for (row, o) in out.iter_mut().enumerate() {
        *o = (dot_wide(&w[row * n..(row + 1) * n], x) + b[row] as f64) as f32;
    }
    Tensor::new(vec![m], out)
}

/// Gradients of [`dense`]: returns `(grad_input, grad_weights, grad_bias)`.
///
/// `grad_input = W^T g`, `grad_weights = g x^T`, `grad_bias = g`.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    out_grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (m, n) = dense_dims("dense_backward", input, weights, bias)?;
    crate::tensor::expect_shape("dense_backward", out_grad, &[m])?;
    let x = input.data();
    let w = weights.data();
    let g = out_grad.data();

    let mut gx_wide = vec![0.0f64; n];
    let mut gw = vec![0.0f32; m * n];
    for row in 0..m {
        let gr = g[row];
        axpy_wide(&mut gx_wide, gr, &w[row * n..(row + 1) * n]);
        let dst = &mut gw[row * n..(row + 1) * n];
        for (d, &xv) in dst.iter_mut().zip(x) {
            *d = (gr as f64 * xv as f64) as f32;
        }
    }
    let mut gx = vec![0.0f32; n];
    crate::tensor::kernels::narrow(&gx_wide, &mut gx);

    let grad_input = Tensor::new(vec![n], gx)?;
    let grad_weights = Tensor::new(vec![m, n], gw)?;
    let grad_bias = Tensor::new(vec![m], g.to_vec())?;
    Ok((grad_input, grad_weights, grad_bias))
}

/// Kept for parity checks: sums `x` once per row so a dense layer over a
/// constant input can be audited cheaply in tests.
#[cfg(test)]
fn constant_input_row(weights_row: &[f32], value: f32, bias: f32) -> f32 {
    (crate::tensor::kernels::sum_wide(weights_row) * value as f64 + bias as f64) as f32
}
