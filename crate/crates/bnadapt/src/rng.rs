//! Small deterministic PRNG used for every stochastic choice in the crate.
//!
//! The generator is splitmix64. It is not cryptographic; it is here so that
//! datasets, corruptions, weight inits and shuffles are bit-reproducible from
//! a single `u64` seed across builds, with no external dependency whose
//! stream might change between versions.

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derive an independent stream for item `stream` of generation `seed`.
    ///
    /// Used to give every image / record its own generator so results do not
    /// depend on processing order.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut s = seed ^ stream.wrapping_mul(0xa076_1d64_78bd_642f);
        // One scramble round so that nearby (seed, stream) pairs decorrelate.
        let mixed = splitmix64(&mut s);
        Rng { state: mixed }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is < 2^-64 * n, irrelevant here.
        let x = self.next_u64() as u128;
        ((x * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (one value per call).
    pub fn normal(&mut self) -> f64 {
        // u1 in (0, 1] so the log never sees zero.
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Poisson sample by Knuth's product method; fine for lambda up to ~100.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        debug_assert!(lambda >= 0.0);
        if lambda <= 0.0 {
            return 0;
        }
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut p = 1.0f64;
        loop {
            p *= self.uniform();
            if p <= limit {
                return k;
            }
            k += 1;
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
