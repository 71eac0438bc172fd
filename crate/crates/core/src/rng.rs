//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by the run
//! seed plus a path of stream identifiers (period, realization, cycle...), so
//! results never depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(seed), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, path))
}

/// Stream tags, to keep the different consumers of one seed apart.
pub mod tag {
    pub const GIBBS: u64 = 1;
    pub const SGS: u64 = 2;
    pub const ESMDA: u64 = 3;
    pub const OBS_NOISE: u64 = 4;
    pub const THRESHOLD: u64 = 5;
    pub const TRUTH: u64 = 6;
    pub const SAMPLING: u64 = 7;
    pub const GRADES: u64 = 8;
    pub const PERIOD: u64 = 9;
    pub const COVER_TEST: u64 = 10;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        let d: u64 = stream(8, &[1, 2]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
