//! SplitMix64: the only random source in the crate, so every stream is
//! reproducible bit-for-bit on any platform.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Advance `state` once; returns `(output, new_state)`.
#[inline]
pub fn splitmix64_next(state: u64) -> (u64, u64) {
    let state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31), state)
}

#[inline]
fn mix(x: u64) -> u64 {
    splitmix64_next(x).0
}

/// Seed for an independent stream keyed by `(seed, label, counter)`.
pub fn derive_seed(seed: u64, label: &str, counter: u64) -> u64 {
    let mut h = mix(seed);
    for &b in label.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    // separates "ab" + 1 from "a" + ...
    h = mix(h ^ label.len() as u64);
    mix(h ^ counter)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn derived(seed: u64, label: &str, counter: u64) -> Self {
        Self::new(derive_seed(seed, label, counter))
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        let (out, state) = splitmix64_next(self.state);
        self.state = state;
        out
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` without modulo bias. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // 2^64 mod n; values under it would over-represent the low residues
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Draw `k` distinct indices from `0..n` in draw order (partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
