//! Deterministic random streams.
//!
//! Every random draw in the workbench comes from a ChaCha8 stream seeded
//! either directly or by name-tagged derivation from a run seed. Derivation
//! is stateless, so adding or reordering parameters never shifts the values
//! another parameter is initialized with.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Child stream derived from `(seed, tag)`, independent of any draw order.
    pub fn derived(seed: u64, tag: &str) -> Self {
        Rng::seeded(fnv1a(seed, tag.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of entropy.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `[0, n)` via widening multiply.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn fill_uniform<T: crate::tensor::Scalar>(&mut self, out: &mut [T], lo: f64, hi: f64) {
        for v in out.iter_mut() {
            *v = T::of(self.uniform(lo, hi));
        }
    }
}

fn fnv1a(seed: u64, tag: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in seed.to_le_bytes().iter().chain(tag.iter()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
