//! Deterministic, platform-independent random streams.
//!
//! A stream is identified by `(master_seed, stream_id)`. The generator is
//! ChaCha8 keyed by the master seed with the ChaCha stream counter set to
//! `stream_id`, so two streams never overlap and a given pair always
//! reproduces the same sequence regardless of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The concrete generator handed to samplers.
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&splitmix64(self.master_seed).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream for a sub-task. Children of different parents or with
    /// different labels get distinct stream ids.
    pub fn derive(&self, label: u64) -> RngStream {
        RngStream {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(label.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_pair_same_sequence() {
        let a: Vec<u64> = RngStream::new(7, 3).rng().random_iter().take(16).collect();
        let b: Vec<u64> = RngStream::new(7, 3).rng().random_iter().take(16).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let a: u64 = RngStream::new(7, 3).rng().random();
        let b: u64 = RngStream::new(7, 4).rng().random();
        let c: u64 = RngStream::new(8, 3).rng().random();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derive_is_stable_and_distinct() {
        let s = RngStream::new(1, 0);
        assert_eq!(s.derive(5), s.derive(5));
        assert_ne!(s.derive(5), s.derive(6));
        assert_ne!(s.derive(5).derive(0), s.derive(6).derive(0));
    }

    #[test]
    fn known_first_draw_is_pinned() {
        // Guards against silent changes to the keying scheme.
        let first: u64 = RngStream::new(0, 0).rng().random();
        assert_eq!(first, 2_808_895_331_991_335_779);
    }
}
