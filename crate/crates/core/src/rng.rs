//! Deterministic random streams.
//!
//! Every stochastic step draws from a [`Stream`] addressed by a path of
//! integers below a master seed, e.g. `(seed) / replicate 17 / bootstrap 3`.
//! Streams are derived by hashing the path, never by splitting a shared
//! generator, so results do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every stream.
pub type StreamRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Addressable node in the stream tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

/// Purpose tags for child streams, so that two consumers under the same
/// parent never share a sequence.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const NAIVE_BOOTSTRAP: u64 = 2;
    pub const DOUBLE_RESAMPLING: u64 = 3;
    pub const K_IMPUTATION: u64 = 4;
    pub const CALIBRATION: u64 = 5;
}

impl Stream {
    pub fn root(seed: u64) -> Self {
        Stream {
            key: splitmix(seed ^ 0x6A09_E667_F3BC_C908),
        }
    }

    pub fn child(self, index: u64) -> Self {
        Stream {
            key: splitmix(self.key.rotate_left(17) ^ splitmix(index)),
        }
    }

    pub fn rng(self) -> StreamRng {
        let mut seed = [0u8; 32];
        let mut z = self.key;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
