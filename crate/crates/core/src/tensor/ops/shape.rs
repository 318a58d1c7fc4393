//! Layout-only operations: flattening and concatenation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Collapses any shape to a rank-1 tensor. Element order is unchanged.
pub fn flatten(input: &Tensor) -> Result<Tensor> {
    Tensor::new(vec![input.data().len()], input.data().to_vec())
}

/// Gradient of [`flatten`]: restores the original shape.
pub fn flatten_backward(input: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
    crate::tensor::expect_shape("flatten_backward", out_grad, &[input.data().len()])?;
    Tensor::new(input.shape().to_vec(), out_grad.data().to_vec())
}

/// Joins two rank-1 tensors end to end.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 1 || b.shape().len() != 1 {
        return Err(Error::shape(
            "concat",
            "two rank-1 tensors",
            format!("{:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![a.data().len() + b.data().len()], data)
}

/// Gradient of [`concat`]: splits the incoming gradient back into the two
/// input segments.
pub fn concat_backward(a: &Tensor, b: &Tensor, out_grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let (na, nb) = (a.data().len(), b.data().len());
    crate::tensor::expect_shape("concat_backward", out_grad, &[na + nb])?;
    let g = out_grad.data();
    Ok((
        Tensor::new(vec![na], g[..na].to_vec())?,
        Tensor::new(vec![nb], g[na..].to_vec())?,
    ))
}

/// Stacks two `[C,H,W]` tensors along the channel axis. Spatial dims must
/// match exactly.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 {
        return Err(Error::shape(
            "concat_channels",
            "two [C, H, W] tensors",
            format!("{sa:?} and {sb:?}"),
        ));
    }
    if sa[1..] != sb[1..] {
        return Err(Error::shape(
            "concat_channels",
            format!("matching spatial dims {}x{}", sa[1], sa[2]),
            format!("{}x{}", sb[1], sb[2]),
        ));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![sa[0] + sb[0], sa[1], sa[2]], data)
}

/// Gradient of [`concat_channels`]: splits the incoming gradient at the
/// channel boundary.
pub fn concat_channels_backward(
    a: &Tensor,
    b: &Tensor,
    out_grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    crate::tensor::expect_shape(
        "concat_channels_backward",
        out_grad,
        &[sa[0] + sb[0], sa[1], sa[2]],
    )?;
    let split = a.data().len();
    let g = out_grad.data();
    Ok((
        Tensor::new(sa, g[..split].to_vec())?,
        Tensor::new(sb, g[split..].to_vec())?,
    ))
}
