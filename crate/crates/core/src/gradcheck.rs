//! Finite-difference verification of analytic gradients.
//!
//! Each probe perturbs one parameter by `+h` and `-h`, reruns the scalar loss,
//! and compares the central-difference slope against the analytic gradient.
//! The slope divides by the realized f32 step `(x+h) - (x-h)` rather than the
//! nominal `2h`, so rounding of the perturbed parameter does not show up as
//! gradient error.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest absolute difference between analytic and numeric slope.
    pub max_abs_error: f64,
    /// Largest relative difference, `|a - n| / max(|a| + |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// Index that produced `max_rel_error`.
    pub worst_index: usize,
    /// Number of parameters probed.
    pub probes: usize,
}

impl GradCheckReport {
    /// True when every probed slope agreed within `tol` relative error.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares `analytic` against central differences of `loss` at `point`,
/// probing the given parameter indices.
pub fn gradient_check<F>(
    point: &Tensor,
    analytic: &Tensor,
    step: f32,
    indices: &[usize],
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&Tensor) -> Result<f32>,
{
    crate::tensor::expect_shape("gradient_check", analytic, point.shape())?;
    if !(step > 0.0) {
        return Err(Error::param("gradient_check", format!("step {step} must be positive")));
    }
    if indices.is_empty() {
        return Err(Error::param("gradient_check", "no indices to probe"));
    }
    let n = point.data().len();
    let mut report = GradCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst_index: indices[0],
        probes: 0,
    };
    let mut work = point.data().to_vec();
    for &i in indices {
        if i >= n {
            return Err(Error::param(
                "gradient_check",
                format!("probe index {i} out of range for {n} parameters"),
            ));
        }
        let orig = work[i];
        let xp = orig + step;
        let xm = orig - step;
        let span = xp as f64 - xm as f64;
        if span == 0.0 {
            return Err(Error::param(
                "gradient_check",
                format!("step {step} vanishes at parameter {i} (value {orig})"),
            ));
        }
        work[i] = xp;
        let fp = loss(&Tensor::new(point.shape().to_vec(), work.clone())?)? as f64;
        work[i] = xm;
        let fm = loss(&Tensor::new(point.shape().to_vec(), work.clone())?)? as f64;
        work[i] = orig;

        let numeric = (fp - fm) / span;
        let a = analytic.data()[i] as f64;
        let abs = (a - numeric).abs();
        let rel = abs / (a.abs() + numeric.abs()).max(1e-8);
        if abs > report.max_abs_error {
            report.max_abs_error = abs;
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.probes += 1;
    }
    Ok(report)
}

/// Picks `count` distinct parameter indices for probing. Small tensors are
/// swept exhaustively; larger ones get a seeded sample so checks stay cheap.
pub fn probe_indices(len: usize, count: usize, rng: &mut SeededRng) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    rng.sample_without_replacement(len, count)
}

/// Directional variant: perturbs every parameter at once along a random
/// direction and compares the realized loss change against the analytic
/// prediction `sum_i g_i * (x_i^+ - x_i^-)`. The comparison magnitude scales
/// with the whole gradient, so an f32-quantized loss does not drown
/// small individual components the way per-coordinate probing does.
pub fn directional_check<F>(
    point: &Tensor,
    analytic: &Tensor,
    step: f32,
    rng: &mut SeededRng,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f32>,
{
    crate::tensor::expect_shape("directional_check", analytic, point.shape())?;
    if !(step > 0.0) {
        return Err(Error::param("directional_check", format!("step {step} must be positive")));
    }
    let x = point.data();
    let dir: Vec<f32> = (0..x.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let xp: Vec<f32> = x.iter().zip(&dir).map(|(&v, &d)| v + step * d).collect();
    let xm: Vec<f32> = x.iter().zip(&dir).map(|(&v, &d)| v - step * d).collect();
    let mut predicted = 0.0f64;
    for ((&a, &p), &m) in analytic.data().iter().zip(&xp).zip(&xm) {
        predicted += a as f64 * (p as f64 - m as f64);
    }
    let fp = loss(&Tensor::new(point.shape().to_vec(), xp)?)? as f64;
    let fm = loss(&Tensor::new(point.shape().to_vec(), xm)?)? as f64;
    let realized = fp - fm;
    Ok((predicted - realized).abs() / predicted.abs().max(realized.abs()).max(1e-10))
}
