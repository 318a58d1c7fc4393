//! Weight initialization.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Fills a tensor with draws from `U[-b, b)` where `b = sqrt(6 / (fan_in +
/// fan_out))`. Elements are drawn in storage order, so the result is fully
/// determined by the stream state.
pub fn xavier_uniform_init(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::param(
            "xavier_uniform_init",
            format!("fan_in {fan_in} fan_out {fan_out}; both must be positive"),
        ));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data)
}
