//! Splittable deterministic random streams.
//!
//! A [`RandomStream`] is a pure value identified by a seed and a path of
//! integer labels. Splitting never mutates the parent, so the stream handed
//! to tree `(b, i)` is the same no matter how many other trees are fit or in
//! what order. Draws come from [`StreamRng`], a SplitMix64 sequence keyed by
//! the path hash.

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    seed: u64,
    key: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix64(seed ^ 0x6A09_E667_F3BC_C908),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stable 64-bit identifier of this stream; usable as a seed for
    /// re-running a single replication in isolation.
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream for `path`. `s.split(&[a, b]) == s.split(&[a]).split(&[b])`.
    pub fn split(&self, path: &[u64]) -> Self {
        let key = path.iter().fold(self.key, |k, &label| {
            mix64(k ^ mix64(label.wrapping_add(GOLDEN).wrapping_mul(0xD134_2543_DE82_EF95)))
        });
        Self { seed: self.seed, key }
    }

    pub fn child(&self, label: u64) -> Self {
        self.split(&[label])
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        StreamRng { state: self.key }
    }
}

/// SplitMix64 generator. Each call to [`RandomStream::rng`] restarts the
/// sequence, so two generators from the same stream agree draw for draw.
#[derive(Clone, Debug)]
pub struct StreamRng {
    state: u64,
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

impl StreamRng {
    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased uniform integer in `0..bound` (Lemire's method).
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "empty range");
        let bound = bound as u64;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            let low = m as u64;
            if low >= bound || low >= bound.wrapping_neg() % bound {
                return (m >> 64) as usize;
            }
        }
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
