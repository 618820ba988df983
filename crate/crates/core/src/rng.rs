//! Seed derivation for independent, reproducible random streams.
//!
//! One experiment seed fans out into per-purpose sub-seeds so that, e.g.,
//! changing the bias draw cannot perturb data generation or weight init.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag for a derived random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Bias = 3,
    Init = 4,
    Train = 5,
    Probe = 6,
    RawProbe = 7,
}

/// Derive a sub-seed from `(seed, stream)` with a SplitMix64 finalizer.
pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    let mut z = seed ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_across_streams() {
        let a = derive_seed(7, Stream::Data);
        let b = derive_seed(7, Stream::Split);
        let c = derive_seed(8, Stream::Data);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(0, Stream::Init), derive_seed(0, Stream::Init));
    }
}
