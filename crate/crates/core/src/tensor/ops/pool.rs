//! 2x2 stride-2 max pooling and nearest-neighbor 2x upsampling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_chw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::shape(op, "[C, H, W]", format!("{s:?}")));
    }
    Ok((s[0], s[1], s[2]))
}

/// Max over non-overlapping 2x2 windows: `[C,H,W] -> [C,floor(H/2),floor(W/2)]`.
/// Only window 2 / stride 2 is supported; an odd trailing row/column is dropped.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    if window != 2 || stride != 2 {
        return Err(Error::Unsupported {
            op: "maxpool2d",
            detail: format!("window {window} stride {stride}; only window 2 / stride 2 is built"),
        });
    }
    let (c, h, w) = check_chw("maxpool2d", input)?;
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2d", "spatial dims of at least 2x2", format!("{h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        let plane = ci * h * w;
        for y in 0..oh {
            let r0 = plane + (2 * y) * w;
            let r1 = r0 + w;
            for x in 0..ow {
                let m = src[r0 + 2 * x]
                    .max(src[r0 + 2 * x + 1])
                    .max(src[r1 + 2 * x])
                    .max(src[r1 + 2 * x + 1]);
                out[ci * oh * ow + y * ow + x] = m;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Gradient of [`maxpool2d`]: each output cell's gradient flows to the first
/// (row-major) maximal element of its window; the other three get zero.
pub fn maxpool2d_backward(input: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_chw("maxpool2d_backward", input)?;
    let (oh, ow) = (h / 2, w / 2);
    crate::tensor::expect_shape("maxpool2d_backward", out_grad, &[c, oh, ow])?;
    let src = input.data();
    let og = out_grad.data();
    let mut gin = vec![0.0f32; c * h * w];
    for ci in 0..c {
        let plane = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let idx = [
                    plane + (2 * y) * w + 2 * x,
                    plane + (2 * y) * w + 2 * x + 1,
                    plane + (2 * y + 1) * w + 2 * x,
                    plane + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = idx[0];
                for &i in &idx[1..] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                gin[best] += og[ci * oh * ow + y * ow + x];
            }
        }
    }
    Tensor::new(vec![c, h, w], gin)
}

/// Nearest-neighbor 2x upsampling: `[C,H,W] -> [C,2H,2W]`.
pub fn upsample_nearest_2x(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_chw("upsample_nearest_2x", input)?;
    let src = input.data();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        for y in 0..h {
            let src_row = &src[ci * h * w + y * w..ci * h * w + (y + 1) * w];
            for dy in 0..2 {
                let dst = ci * oh * ow + (2 * y + dy) * ow;
                for x in 0..w {
                    out[dst + 2 * x] = src_row[x];
                    out[dst + 2 * x + 1] = src_row[x];
                }
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Gradient of [`upsample_nearest_2x`]: each source cell collects its four
/// replicas, summed in fixed row-major order.
pub fn upsample_nearest_2x_backward(input: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_chw("upsample_nearest_2x_backward", input)?;
    let (oh, ow) = (2 * h, 2 * w);
    crate::tensor::expect_shape("upsample_nearest_2x_backward", out_grad, &[c, oh, ow])?;
    let og = out_grad.data();
    let mut gin = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let base = ci * oh * ow;
                let sum = (og[base + (2 * y) * ow + 2 * x] as f64
                    + og[base + (2 * y) * ow + 2 * x + 1] as f64)
                    + (og[base + (2 * y + 1) * ow + 2 * x] as f64
                        + og[base + (2 * y + 1) * ow + 2 * x + 1] as f64);
                gin[ci * h * w + y * w + x] = sum as f32;
            }
        }
    }
    Tensor::new(vec![c, h, w], gin)
}
