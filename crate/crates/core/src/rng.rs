//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, id, purpose)`, so results do not depend on iteration order or on
//! how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags. Distinct tags give independent streams for the same id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Features = 1,
    Labels = 2,
    Acquisition = 3,
    Environment = 4,
    Thinning = 5,
    Simulation = 6,
    Rollout = 7,
    Imputation = 8,
    Bootstrap = 9,
    Training = 10,
    Subsample = 11,
    Diagnostic = 12,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a stream key into a single 64-bit seed.
pub fn stream_key(seed: u64, id: u64, purpose: Purpose) -> u64 {
    let a = splitmix64(seed ^ 0x5851_F42D_4C95_7F2D);
    let b = splitmix64(a ^ id.wrapping_mul(0x2545_F491_4F6C_DD1D));
    splitmix64(b ^ (purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn stream(seed: u64, id: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(seed, id, purpose));
    // sub-stream selection keeps different purposes apart even on key collision
    rng.set_stream(purpose as u64);
    rng
}

/// A stream for a sub-item of a record (replicate, imputation draw, ...).
pub fn substream(seed: u64, id: u64, sub: u64, purpose: Purpose) -> StreamRng {
    let key = stream_key(seed, id, purpose);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(key ^ splitmix64(sub.wrapping_add(1))));
    rng.set_stream(purpose as u64);
    rng
}
