//! Seed derivation. Every random draw in the toolkit comes from a ChaCha
//! stream keyed by `(master seed, input id, purpose)`, so results do not
//! depend on the order in which inputs are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purposes keep streams for different consumers of the same input apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Noise = 1,
    TargetChoice = 2,
    Attack = 3,
    Dropout = 4,
    PassSet = 5,
    Split = 6,
    Training = 7,
    Init = 8,
    Blobs = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, id: u64, stream: Stream) -> u64 {
    splitmix(splitmix(splitmix(master) ^ id) ^ (stream as u64))
}

pub fn stream(master: u64, id: u64, stream: Stream) -> Rng {
    Rng::seed_from_u64(derive_seed(master, id, stream))
}
