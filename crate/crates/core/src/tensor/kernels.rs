//! Reduction kernels shared by every layer primitive.
//!
//! All reductions widen f32 operands to f64 and accumulate in a fixed order:
//! eight independent lanes over `chunks_exact(8)`, lanes combined pairwise,
//! then the remainder added sequentially. The order never varies, so results
//! are bit-identical across runs and platforms, and the lane split lets LLVM
//! keep the accumulators in vector registers on a single core.

const LANES: usize = 8;

/// `sum_i a[i] * b[i]` in f64.
pub fn dot_wide(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] += xa[l] as f64 * xb[l] as f64;
        }
    }
    let mut tail = combine(acc);
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *xa as f64 * *xb as f64;
    }
    tail
}

/// `sum_i x[i]` in f64.
pub fn sum_wide(x: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut cx = x.chunks_exact(LANES);
    for xs in &mut cx {
        for l in 0..LANES {
            acc[l] += xs[l] as f64;
        }
    }
    let mut tail = combine(acc);
    for v in cx.remainder() {
        tail += *v as f64;
    }
    tail
}

/// `acc[i] += s * x[i]` into an f64 buffer. Elementwise, so ordering is a
/// non-issue; the wide buffer keeps repeated accumulation exact-rounded.
pub fn axpy_wide(acc: &mut [f64], s: f32, x: &[f32]) {
    debug_assert_eq!(acc.len(), x.len());
    let sw = s as f64;
    for (a, v) in acc.iter_mut().zip(x) {
        *a += sw * *v as f64;
    }
}

fn combine(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Narrow an f64 accumulation buffer back to f32 storage.
pub fn narrow(src: &[f64], dst: &mut [f32]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *s as f32;
    }
}
