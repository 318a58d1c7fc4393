//! Seeded, counter-based PRNG.
//!
//! The generator is splitmix64: a Weyl counter advanced by a fixed odd
//! constant, hashed through a 64-bit finalizer. Identical seeds produce
//! identical streams on every platform (pure integer arithmetic, no
//! platform-dependent state), which is what makes whole pipeline runs
//! reproducible down to the bit.

const WEYL: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over bytes; used to turn names (classes, config text) into stable
/// 64-bit tags and run identifiers.
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic random stream: `SeededRng::new(s)` yields the same values
/// everywhere, every time.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, counter: 0 }
    }

    /// The seed this stream was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent stream for a tagged sub-task (a fold, a class,
    /// an epoch). Derivation depends only on (seed, tag), not on how much of
    /// this stream has been consumed.
    pub fn derive(&self, tag: u64) -> SeededRng {
        SeededRng::new(mix(self.seed ^ mix(tag.wrapping_add(WEYL))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(WEYL)))
    }

    /// Uniform in `[0, 1)` with 24 bits of resolution (exact in f32).
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.next_f32()
    }

    /// Uniform integer in `[0, n)`, unbiased via rejection sampling.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices sampled uniformly from `0..n` without replacement,
    /// returned in ascending order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} from {n}");
        let mut ids: Vec<usize> = (0..n).collect();
        // Partial Fisher-Yates: after k swaps the prefix is the sample.
        for i in 0..k {
            let j = i + self.next_below((n - i) as u64) as usize;
            ids.swap(i, j);
        }
        let mut picked = ids[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = SeededRng::new(1);
        let mut b = SeededRng::new(2);
        let same = (0..32).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    // Frozen first outputs: guards against accidental algorithm changes that
    // would silently invalidate every recorded manifest.
    #[test]
    fn stream_is_bit_stable() {
        let mut r = SeededRng::new(0);
        let first: Vec<u64> = (0..4).map(|_| r.next_u64()).collect();
        assert_eq!(
            first,
            vec![
                0xE220_A839_7B1D_CDAF,
                0x6E78_9E6A_A1B9_65F4,
                0x06C4_5D18_8009_454F,
                0xF88B_B8A8_724C_81EC
            ]
        );
    }

    #[test]
    fn unit_floats_in_range() {
        let mut r = SeededRng::new(3);
        for _ in 0..10_000 {
            let f = r.next_f32();
            assert!((0.0..1.0).contains(&f));
            let d = r.next_f64();
            assert!((0.0..1.0).contains(&d));
        }
    }

    #[test]
    fn derive_is_consumption_independent() {
        let mut a = SeededRng::new(9);
        let b = SeededRng::new(9);
        let before = b.derive(5);
        a.next_u64();
        a.next_u64();
        let after = a.derive(5);
        let mut x = before;
        let mut y = after;
        for _ in 0..16 {
            assert_eq!(x.next_u64(), y.next_u64());
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut r = SeededRng::new(11);
        let mut v: Vec<usize> = (0..50).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn sample_without_replacement_distinct() {
        let mut r = SeededRng::new(13);
        let s = r.sample_without_replacement(100, 30);
        assert_eq!(s.len(), 30);
        for w in s.windows(2) {
            assert!(w[0] < w[1]);
        }
    }
}
