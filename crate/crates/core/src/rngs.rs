//! Seed derivation. All randomness in the crate flows from one base seed
//! through named substreams, so any point of a run can be reconstructed
//! from (seed, step) without serializing generator internals.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Substream tags. Fixed values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    ParamInit = 1,
    Augment = 2,
    Dropout = 3,
    EpochShuffle = 4,
    Split = 5,
    Pairing = 6,
    Turing = 7,
    Probe = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for a (seed, stream, counter) triple. `counter` is typically the
/// training step or epoch index.
pub fn derive(seed: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mixed = splitmix64(seed)
        ^ splitmix64((stream as u64).wrapping_mul(0xA076_1D64_78BD_642F))
        ^ splitmix64(counter.wrapping_mul(0xE703_7ED1_A0B4_28DB));
    ChaCha8Rng::seed_from_u64(splitmix64(mixed))
}
