//! Seeded random streams.
//!
//! Every run draws from xoshiro256++ generators. A run seed is expanded into
//! independent per-purpose streams with SplitMix64, so the stream used for
//! weight initialisation never shares state with the one used for batching.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Named purposes that get their own generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Subsample = 2,
    Init = 3,
    Batches = 4,
    Corruption = 5,
    Probe = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    sub_stream(seed, stream, 0)
}

/// Generator for `stream` under `seed`, further split by `index`.
pub fn sub_stream(seed: u64, stream: Stream, index: u64) -> Rng {
    let s = splitmix64(splitmix64(seed) ^ splitmix64((stream as u64) << 32 | index));
    Rng::seed_from_u64(s)
}
