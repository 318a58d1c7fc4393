//! Minimal deterministic tensor engine.
//!
//! Storage is f32; every reduction (dot products, column sums, gradient
//! scatter) accumulates in f64 with a fixed operation order, so identical
//! inputs give bit-identical outputs across runs and platforms. Layer
//! primitives live in [`ops`]; each forward op has a matching `*_backward`
//! that fills gradients for all of its differentiable inputs.

pub mod kernels;
pub mod ops;

pub use ops::*;

use crate::error::{Error, Result};

/// Dense n-dimensional f32 array in row-major order, with an optional
/// same-shape gradient buffer (used by trainable parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Build from shape + data; fails unless `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::param("tensor", format!("zero dim in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{expected} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret as a new shape with the same element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{} values for shape {shape:?}", self.data.len()),
                format!("{expected} values"),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Gradient buffer, if one has been attached.
    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Attach (zero-filled) or clear-and-keep the gradient buffer.
    pub fn ensure_grad(&mut self) -> &mut [f32] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_deref_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_deref_mut() {
            g.fill(0.0);
        }
    }

    /// Accumulate `other`'s data into this tensor's gradient buffer.
    pub fn add_to_grad(&mut self, other: &Tensor) -> Result<()> {
        if other.shape != self.shape {
            return Err(Error::shape(
                "add_to_grad",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        let g = self.ensure_grad();
        for (gi, oi) in g.iter_mut().zip(&other.data) {
            *gi += *oi;
        }
        Ok(())
    }

    pub fn scale_grad(&mut self, s: f32) {
        if let Some(g) = self.grad.as_deref_mut() {
            for gi in g.iter_mut() {
                *gi *= s;
            }
        }
    }

    /// True when every value (and gradient, if present) is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self.grad.as_deref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Checks a tensor has exactly the given shape, naming the op on failure.
pub(crate) fn expect_shape(op: &'static str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(op, format!("{shape:?}"), format!("{:?}", t.shape())));
    }
    Ok(())
}
