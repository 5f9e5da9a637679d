//! Seed discipline.
//!
//! Every random stream in the crate is derived from a `(master seed, domain
//! tag, index)` triple. The tag selects a ChaCha key and the index selects the
//! ChaCha stream under that key, so substreams never overlap and the result
//! of a Monte Carlo run does not depend on the order in which trials execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The PRNG used everywhere in the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A plain stream seeded directly from a `u64`.
pub fn rng_from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Derives a child `u64` seed, for APIs that take a seed rather than a stream.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ tag_hash(tag)) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Independent substream `index` of domain `tag` under `master`.
pub fn substream(master: u64, tag: &str, index: u64) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(splitmix64(master ^ tag_hash(tag)));
    rng.set_stream(index);
    rng
}

/// Convenience wrapper that carries the master seed around.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    pub master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn stream(&self, tag: &str, index: u64) -> StreamRng {
        substream(self.master, tag, index)
    }

    pub fn seed(&self, tag: &str, index: u64) -> u64 {
        derive_seed(self.master, tag, index)
    }
}
