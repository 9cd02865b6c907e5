//! Portable pseudo-random source.
//!
//! Everything stochastic in the crate (corpus synthesis, parameter
//! initialisation, batch order) draws from [`Prng`], a PCG XSL RR 128/64
//! generator (`rand_pcg::Pcg64`) seeded through `SeedableRng::seed_from_u64`.
//! Derived values are computed in-crate so the streams are reproducible from
//! the generator's raw 64-bit output alone:
//!
//! * uniform `[0, 1)`: `(next_u64 >> 11) · 2⁻⁵³`
//! * integer below `n`: `(next_u64 · n) >> 64` (128-bit multiply)
//! * standard normal: Box–Muller, `sqrt(−2 ln(1 − u₁)) · cos(2π u₂)`, one
//!   value per two uniforms
//! * independent streams: the base seed XOR the FNV-1a hash of a label

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

#[derive(Clone, Debug)]
pub struct Prng(Pcg64);

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng(Pcg64::seed_from_u64(seed))
    }

    /// Independent stream for `label` under `seed`.
    pub fn derive(seed: u64, label: &str) -> Self {
        Prng::new(seed ^ fnv1a(label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Integer in the inclusive range `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
