//! Index-addressable ±1 coin streams.
//!
//! Every row `m` of a [`CoinMatrix`] lives on its own ChaCha8 stream, so any
//! `(m, k)` entry can be read without generating the entries before it. One
//! generator bit is consumed per sign, least significant bit first.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. A bijection on `u64`.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for Monte Carlo replica `replica` under `base_seed`.
///
/// `splitmix64(base_seed + GOLDEN_GAMMA * (replica + 1))`: the affine map is
/// injective in `replica` modulo 2^64 (odd multiplier) and the finalizer is a
/// bijection, so distinct replicas of one base seed never collide.
pub fn derive_replica_seed(base_seed: u64, replica: u64) -> u64 {
    splitmix64(base_seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(replica.wrapping_add(1))))
}

/// Deterministic matrix of i.i.d. fair signs `X_m(k)`, `m ≥ 0`, `k ≥ 1`.
///
/// `lane` separates independent matrices under one seed (one lane per planar
/// coordinate).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoinMatrix {
    base_seed: u64,
    lane: u32,
}

impl CoinMatrix {
    pub fn new(base_seed: u64) -> Self {
        Self { base_seed, lane: 0 }
    }

    /// Independent matrix sharing the base seed.
    pub fn with_lane(self, lane: u32) -> Self {
        Self { lane, ..self }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn lane(&self) -> u32 {
        self.lane
    }

    fn stream_rng(&self, m: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(((self.lane as u64) << 32) | m as u64);
        rng
    }

    /// Sign `X_m(k)`. Panics if `k == 0`.
    pub fn sign_at(&self, m: u32, k: u64) -> i8 {
        assert!(k >= 1, "step index starts at 1");
        let idx = k - 1;
        let mut rng = self.stream_rng(m);
        rng.set_word_pos((idx / 32) as u128);
        let word = rng.next_u32();
        if (word >> (idx % 32)) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Sequential reader over row `m`, starting at `k = 1`.
    pub fn row(&self, m: u32) -> CoinRow {
        CoinRow { rng: self.stream_rng(m), word: 0, left: 0 }
    }
}

/// Iterator over one row of a [`CoinMatrix`]; never ends.
#[derive(Debug, Clone)]
pub struct CoinRow {
    rng: ChaCha8Rng,
    word: u32,
    left: u32,
}

impl Iterator for CoinRow {
    type Item = i8;

    #[inline]
    fn next(&mut self) -> Option<i8> {
        if self.left == 0 {
            self.word = self.rng.next_u32();
            self.left = 32;
        }
        let bit = self.word & 1;
        self.word >>= 1;
        self.left -= 1;
        Some(if bit == 1 { 1 } else { -1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn sign_is_deterministic() {
        let c = CoinMatrix::new(7);
        assert_eq!(c.sign_at(0, 1), c.sign_at(0, 1));
        assert_eq!(CoinMatrix::new(7).sign_at(3, 999), c.sign_at(3, 999));
    }

    #[test]
    fn row_reader_matches_random_access() {
        let c = CoinMatrix::new(11).with_lane(1);
        for m in [0, 1, 5] {
            let seq: Vec<i8> = c.row(m).take(200).collect();
            for (i, s) in seq.iter().enumerate() {
                assert_eq!(*s, c.sign_at(m, i as u64 + 1));
            }
        }
    }

    #[test]
    fn mean_near_zero() {
        let c = CoinMatrix::new(2024);
        let sum: i64 = c.row(3).take(1_000_000).map(|s| s as i64).sum();
        assert!((sum as f64 / 1e6).abs() < 0.005);
    }

    #[test]
    fn rows_and_lanes_uncorrelated() {
        let c = CoinMatrix::new(5);
        let n = 100_000;
        let pairs = [(c.row(0), c.row(1)), (c.row(2), c.row(9)), (c.row(4), c.with_lane(1).row(4))];
        for (a, b) in pairs {
            let dot: i64 = a.zip(b).take(n).map(|(x, y)| (x * y) as i64).sum();
            assert!((dot as f64 / n as f64).abs() < 0.01);
        }
    }

    #[test]
    fn replica_seeds_distinct() {
        let seeds: HashSet<u64> = (0..10_000).map(|r| derive_replica_seed(42, r)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(derive_replica_seed(1, 0), derive_replica_seed(1, 1));
        assert_eq!(derive_replica_seed(9, 3), derive_replica_seed(9, 3));
    }
}
