//! Counter-based deterministic random source.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`, so any
//! consumer can split work across threads by deriving per-item streams and
//! still reproduce the exact same numbers on any platform and any worker
//! count. There is no hidden global state.

/// Deterministic random source keyed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn avalanche(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

impl RandomSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            seed,
            stream: stream_id,
            counter: 0,
        }
    }

    /// Derive an independent stream from this one. The child starts at
    /// counter zero; its draws never collide with the parent's.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self {
            seed: self.seed,
            stream: avalanche(self.stream.wrapping_mul(GOLDEN) ^ stream_id.wrapping_add(GOLDEN)),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mixed = avalanche(
            avalanche(self.seed.wrapping_add(GOLDEN)) ^ self.stream.wrapping_add(GOLDEN),
        );
        let out = avalanche(mixed ^ self.counter.wrapping_mul(GOLDEN));
        self.counter += 1;
        out
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1)`; safe to pass to `ln`.
    #[inline]
    pub fn next_open_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` without modulo bias.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    pub fn next_bool(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_open_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Poisson draw with mean `lambda`.
    ///
    /// Exact samplers in both regimes: Knuth's product-of-uniforms for small
    /// means, Hormann's PTRS transformed rejection for large ones (needed
    /// for photon counts in the 1e4..1e6 range).
    pub fn next_poisson(&mut self, lambda: f64) -> f64 {
        debug_assert!(lambda >= 0.0);
        if lambda <= 0.0 {
            return 0.0;
        }
        if lambda < 10.0 {
            let limit = (-lambda).exp();
            let mut count = 0u64;
            let mut prod = self.next_open_f64();
            while prod > limit {
                count += 1;
                prod *= self.next_open_f64();
            }
            return count as f64;
        }
        // PTRS (Hormann 1993), exact for lambda >= 10.
        let slam = lambda.sqrt();
        let loglam = lambda.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.next_f64() - 0.5;
            let v = self.next_open_f64();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return k;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() * inv_alpha / (a / (us * us) + b);
            let rhs = -lambda + k * loglam - ln_factorial(k);
            if lhs <= rhs {
                return k;
            }
        }
    }

    /// Partial Fisher-Yates: the first `count` entries of a random
    /// permutation of `0..n`.
    pub fn sample_without_replacement(&mut self, n: usize, count: usize) -> Vec<usize> {
        debug_assert!(count <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}

/// ln(k!) for non-negative integral `k` passed as f64.
fn ln_factorial(k: f64) -> f64 {
    const TABLE: [f64; 16] = [
        0.0,
        0.0,
        0.693147180559945_0,
        1.791759469228055_0,
        3.178053830347946_0,
        4.787491742782046,
        6.579251212010101,
        8.525161361065415,
        10.60460290274525,
        12.80182748008147,
        15.10441257307552,
        17.50230784587389,
        19.98721449566189,
        22.55216385312342,
        25.19122118273868,
        27.89927138384089,
    ];
    let ki = k as usize;
    if ki < TABLE.len() {
        return TABLE[ki];
    }
    // Stirling series; relative error < 1e-12 for k >= 16.
    let x = k + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x
        + 0.5 * (std::f64::consts::TAU).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}
