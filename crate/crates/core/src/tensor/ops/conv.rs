//! 2-D convolutions: valid 3x3 (the classifier stacks), same-padded 3x3 and
//! 1x1 (the U-Net), stride 1 throughout.
//!
//! All variants share one im2col + GEMM path. The patch matrix is stored
//! transposed (`col_t[p][k]`, k ordered (ci, kh, kw)) so both GEMM operands
//! are contiguous, and the p-loop is tiled so the patch tile and the kernel
//! matrix stay cache-resident on a single core.

use crate::error::{Error, Result};
use crate::tensor::kernels::{axpy_wide, dot_wide, narrow, sum_wide};
use crate::tensor::Tensor;

const P_TILE: usize = 256;

struct ConvGeometry {
    c_in: usize,
    in_h: usize,
    in_w: usize,
    c_out: usize,
    ksize: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.c_in * self.ksize * self.ksize
    }

    fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn geometry(
    op: &'static str,
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    ksize: usize,
    pad: usize,
) -> Result<ConvGeometry> {
    let ishape = input.shape();
    if ishape.len() != 3 {
        return Err(Error::shape(op, "[C_in, H, W]", format!("{ishape:?}")));
    }
    let (c_in, in_h, in_w) = (ishape[0], ishape[1], ishape[2]);
    let kshape = kernels.shape();
    let c_out = match (ksize, kshape) {
        (3, [c_out, kc, 3, 3]) if *kc == c_in => *c_out,
        (3, _) => {
            return Err(Error::shape(
                op,
                format!("[C_out, {c_in}, 3, 3]"),
                format!("{kshape:?}"),
            ))
        }
        (1, [c_out, kc]) if *kc == c_in => *c_out,
        (1, _) => {
            return Err(Error::shape(
                op,
                format!("[C_out, {c_in}]"),
                format!("{kshape:?}"),
            ))
        }
        _ => unreachable!("only 1x1 and 3x3 kernels are built"),
    };
    if bias.shape() != [c_out] {
        return Err(Error::shape(op, format!("[{c_out}]"), format!("{:?}", bias.shape())));
    }
    let span = ksize - 2 * pad; // spatial shrink per output dim
    if in_h < span || in_w < span || in_h + 2 * pad < ksize || in_w + 2 * pad < ksize {
        return Err(Error::shape(
            op,
            format!("spatial dims of at least {span}x{span}"),
            format!("{in_h}x{in_w}"),
        ));
    }
    Ok(ConvGeometry {
        c_in,
        in_h,
        in_w,
        c_out,
        ksize,
        pad,
        out_h: in_h + 2 * pad - ksize + 1,
        out_w: in_w + 2 * pad - ksize + 1,
    })
}

/// Unfold patches into `col_t[p][k]`, p = oh*out_w+ow, k = (ci, kh, kw).
/// Padding reads as zero.
fn im2col_t(input: &[f32], g: &ConvGeometry, col_t: &mut [f32]) {
    let k_len = g.patch_len();
    let plane = g.in_h * g.in_w;
    col_t.fill(0.0);
    for oh in 0..g.out_h {
        for ow in 0..g.out_w {
            let dst = (oh * g.out_w + ow) * k_len;
            for ci in 0..g.c_in {
                let src_plane = ci * plane;
                for kh in 0..g.ksize {
                    let ih = (oh + kh) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    let src_row = src_plane + ih as usize * g.in_w;
                    let krow = dst + ci * g.ksize * g.ksize + kh * g.ksize;
                    for kw in 0..g.ksize {
                        let iw = (ow + kw) as isize - g.pad as isize;
                        if iw < 0 || iw >= g.in_w as isize {
                            continue;
                        }
                        col_t[krow + kw] = input[src_row + iw as usize];
                    }
                }
            }
        }
    }
}

fn forward(input: &Tensor, kernels: &Tensor, bias: &Tensor, g: &ConvGeometry) -> Tensor {
    let k_len = g.patch_len();
    let p_count = g.out_positions();
    let mut col_t = vec![0.0f32; p_count * k_len];
    im2col_t(input.data(), g, &mut col_t);

    let kern = kernels.data();
    let b = bias.data();
    let mut out = vec![0.0f32; g.c_out * p_count];
    let mut p0 = 0;
    while p0 < p_count {
        let p1 = (p0 + P_TILE).min(p_count);
        for oc in 0..g.c_out {
            let krow = &kern[oc * k_len..(oc + 1) * k_len];
            let row = &mut out[oc * p_count..(oc + 1) * p_count];
            for p in p0..p1 {
                row[p] = (dot_wide(krow, &col_t[p * k_len..(p + 1) * k_len]) + b[oc] as f64) as f32;
            }
        }
        p0 = p1;
    }
    Tensor::new(vec![g.c_out, g.out_h, g.out_w], out).expect("conv output shape")
}

fn backward(
    input: &Tensor,
    kernels: &Tensor,
    out_grad: &Tensor,
    g: &ConvGeometry,
) -> (Tensor, Tensor, Tensor) {
    let k_len = g.patch_len();
    let p_count = g.out_positions();
    let mut col_t = vec![0.0f32; p_count * k_len];
    im2col_t(input.data(), g, &mut col_t);

    let og = out_grad.data();
    let kern = kernels.data();

    // d/d bias: row sums of the output gradient.
    let mut grad_bias = vec![0.0f32; g.c_out];
    for oc in 0..g.c_out {
        grad_bias[oc] = sum_wide(&og[oc * p_count..(oc + 1) * p_count]) as f32;
    }

    // d/d kernels: og (C_out x P) * col_t (P x K).
    let mut gk_wide = vec![0.0f64; g.c_out * k_len];
    let mut p0 = 0;
    while p0 < p_count {
        let p1 = (p0 + P_TILE).min(p_count);
        for oc in 0..g.c_out {
            let dst = &mut gk_wide[oc * k_len..(oc + 1) * k_len];
            let og_row = &og[oc * p_count..(oc + 1) * p_count];
            for p in p0..p1 {
                axpy_wide(dst, og_row[p], &col_t[p * k_len..(p + 1) * k_len]);
            }
        }
        p0 = p1;
    }
    let mut grad_kernels = vec![0.0f32; g.c_out * k_len];
    narrow(&gk_wide, &mut grad_kernels);

    // d/d input: kernels^T (K x C_out) * og (C_out x P), scattered back.
    let mut gcol = vec![0.0f64; k_len];
    let plane = g.in_h * g.in_w;
    let mut gin_wide = vec![0.0f64; g.c_in * plane];
    for p in 0..p_count {
        gcol.fill(0.0);
        for oc in 0..g.c_out {
            axpy_wide(&mut gcol, og[oc * p_count + p], &kern[oc * k_len..(oc + 1) * k_len]);
        }
        let oh = p / g.out_w;
        let ow = p % g.out_w;
        for ci in 0..g.c_in {
            for kh in 0..g.ksize {
                let ih = (oh + kh) as isize - g.pad as isize;
                if ih < 0 || ih >= g.in_h as isize {
                    continue;
                }
                for kw in 0..g.ksize {
                    let iw = (ow + kw) as isize - g.pad as isize;
                    if iw < 0 || iw >= g.in_w as isize {
                        continue;
                    }
                    gin_wide[ci * plane + ih as usize * g.in_w + iw as usize] +=
                        gcol[ci * g.ksize * g.ksize + kh * g.ksize + kw];
                }
            }
        }
    }
    let mut grad_input = vec![0.0f32; g.c_in * plane];
    narrow(&gin_wide, &mut grad_input);

    (
        Tensor::new(vec![g.c_in, g.in_h, g.in_w], grad_input).expect("grad input shape"),
        Tensor::new(kernels.shape().to_vec(), grad_kernels).expect("grad kernel shape"),
        Tensor::from_vec(grad_bias),
    )
}

/// Valid 3x3 convolution, stride 1: `[C_in,H,W] -> [C_out,H-2,W-2]`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = geometry("conv2d", input, kernels, bias, 3, 0)?;
    Ok(forward(input, kernels, bias, &g))
}

/// Gradients of [`conv2d`] w.r.t. (input, kernels, bias).
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    out_grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let bias = Tensor::zeros(&[kernels.shape()[0]]);
    let g = geometry("conv2d_backward", input, kernels, &bias, 3, 0)?;
    crate::tensor::expect_shape("conv2d_backward", out_grad, &[g.c_out, g.out_h, g.out_w])?;
    Ok(backward(input, kernels, out_grad, &g))
}

/// Same-padded 3x3 convolution (zero padding 1): `[C_in,H,W] -> [C_out,H,W]`.
pub fn conv2d_same(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = geometry("conv2d_same", input, kernels, bias, 3, 1)?;
    Ok(forward(input, kernels, bias, &g))
}

/// Gradients of [`conv2d_same`] w.r.t. (input, kernels, bias).
pub fn conv2d_same_backward(
    input: &Tensor,
    kernels: &Tensor,
    out_grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let bias = Tensor::zeros(&[kernels.shape()[0]]);
    let g = geometry("conv2d_same_backward", input, kernels, &bias, 3, 1)?;
    crate::tensor::expect_shape("conv2d_same_backward", out_grad, &[g.c_out, g.out_h, g.out_w])?;
    Ok(backward(input, kernels, out_grad, &g))
}

/// Pointwise (1x1) convolution: `[C_in,H,W] -> [C_out,H,W]`, kernels `[C_out,C_in]`.
pub fn conv1x1(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = geometry("conv1x1", input, kernels, bias, 1, 0)?;
    Ok(forward(input, kernels, bias, &g))
}

/// Gradients of [`conv1x1`] w.r.t. (input, kernels, bias).
pub fn conv1x1_backward(
    input: &Tensor,
    kernels: &Tensor,
    out_grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let bias = Tensor::zeros(&[kernels.shape()[0]]);
    let g = geometry("conv1x1_backward", input, kernels, &bias, 1, 0)?;
    crate::tensor::expect_shape("conv1x1_backward", out_grad, &[g.c_out, g.out_h, g.out_w])?;
    Ok(backward(input, kernels, out_grad, &g))
}
