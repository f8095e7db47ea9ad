//! Hierarchical, counter-based random streams.
//!
//! Every random quantity in the engine is drawn from a stream identified by a
//! path of integers (`seed → batch → item → role → ...`). A [`StreamKey`] is a
//! 64-bit digest of that path; [`StreamKey::rng`] turns it into a ChaCha8
//! generator. Derivation is a pure function of the path, so streams can be
//! created in any order and on any thread without changing the values they
//! produce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator type handed to every sampling routine.
pub type RngStream = ChaCha8Rng;

/// Role labels for the per-item stream split.
pub mod role {
    pub const STRUCTURE: u64 = 0x5354_5255;
    pub const SCHEDULE: u64 = 0x5343_4845;
    pub const INTERVENTION: u64 = 0x494e_5456;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const INIT: u64 = 0x494e_4954;
    pub const REGIME: u64 = 0x5245_4749;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifier of one random stream in the derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn from_seed(seed: u64) -> Self {
        StreamKey(splitmix64(seed ^ 0x7473_636d_5f72_6f6f))
    }

    /// Child stream for `label`. Distinct labels give unrelated keys.
    pub fn derive(self, label: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Materialize the stream as a generator.
    pub fn rng(self) -> RngStream {
        let mut seed = [0u8; 32];
        let mut s = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
