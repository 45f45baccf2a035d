//! Deterministic random streams for replica-parallel Monte Carlo.
//!
//! A [`SeedStream`] is a 64-bit key. Replica `r` of a stream draws from a
//! ChaCha8 generator keyed by the stream and positioned on ChaCha stream
//! number `r`, so the numbers a replica sees depend only on
//! `(seed, tags, r)` and never on how replicas are scheduled onto threads.
//!
//! Keys are derived with the SplitMix64 finalizer:
//!
//! ```text
//! key(child) = splitmix64(key(parent) ^ splitmix64(tag + 0x9e3779b97f4a7c15))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Generator handed to every replica.
pub type ReplicaRng = ChaCha8Rng;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { key: splitmix64(seed) }
    }

    pub fn key(self) -> u64 {
        self.key
    }

    /// Independent child stream identified by `tag`.
    pub fn substream(self, tag: u64) -> Self {
        Self {
            key: splitmix64(self.key ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    /// Generator for replica `index`.
    pub fn rng(self, index: u64) -> ReplicaRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(index);
        rng
    }

    /// Runs `f` once per replica in parallel and returns the results in
    /// replica order.
    pub fn map<T, F>(self, replicas: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, &mut ReplicaRng) -> T + Sync + Send,
    {
        (0..replicas as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = self.rng(i);
                f(i, &mut rng)
            })
            .collect()
    }
}
