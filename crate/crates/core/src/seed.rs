//! Counter-based seed derivation.
//!
//! Every random decision in a simulation draws from its own stream, keyed by
//! `(master, purpose, a, b)`. Streams never depend on scheduling, so results
//! are identical for any worker-thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init,
    Partition,
    LocalTrain,
    Selection,
    Controller,
    Synth,
    Epoch,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 0x696e_6974,
            Purpose::Partition => 0x7061_7274,
            Purpose::LocalTrain => 0x6c6f_6361,
            Purpose::Selection => 0x7365_6c65,
            Purpose::Controller => 0x6374_726c,
            Purpose::Synth => 0x7379_6e74,
            Purpose::Epoch => 0x6570_6f63,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the master seed with a purpose tag and two counters.
pub fn derive_seed(master: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ purpose.tag());
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(master: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    rng_from(derive_seed(master, purpose, a, b))
}
