//! Keyed counter-based random streams.
//!
//! A stream is identified by `(seed, stream_id)`. Work is cut into fixed-size
//! row blocks and block `b` draws from a ChaCha8 keystream keyed by
//! `(seed, b)` with nonce `stream_id`, so every block can be generated
//! independently and the result does not depend on how blocks are scheduled
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Generator for row block `block`.
    pub fn block(&self, block: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&block.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Sequential generator for small, inherently serial consumers (shuffles, init).
    pub fn generator(&self) -> ChaCha8Rng {
        self.block(u64::MAX)
    }

    /// A child stream with the same seed and a stream id derived from `tag`.
    pub fn split(&self, tag: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
