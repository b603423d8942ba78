//! Seed derivation.
//!
//! Every random stream in a run is keyed by `(base seed, stream, index)` and
//! mixed with SplitMix64, so runs in an ensemble and the different samplers
//! inside one run never share a stream.

/// Independent purposes a run draws randomness for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Collocation = 2,
    SourceBoundary = 3,
    TargetBoundary = 4,
    TestSet = 5,
    Ensemble = 6,
    Evaluation = 7,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `stream` for run `base`.
pub fn derive(base: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(base) ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Seed of the `i`-th ensemble member.
///
/// `splitmix64` is a bijection on `u64`, so distinct `i` give distinct seeds.
pub fn ensemble_member(base: u64, i: u64) -> u64 {
    splitmix64(derive(base, Stream::Ensemble) ^ i)
}
