//! Seed derivation: every random stream is named by `(root, tag, index)`.
//!
//! The derived value is `splitmix64(root ^ splitmix64(fnv1a(tag) ^ splitmix64(index)))`,
//! so streams for different purposes or indices never share a seed by
//! construction of the inputs, and the scheme is stable across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// The random generator used everywhere (ChaCha20 from `rand_chacha` 0.9).
pub type Rng = ChaCha20Rng;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a of a tag string.
pub fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(tag) ^ splitmix64(index)))
}

pub fn rng(root: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(root, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable() {
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(derive(7, "sim", 0), derive(7, "sim", 0));
        assert_ne!(derive(7, "sim", 0), derive(7, "sim", 1));
        assert_ne!(derive(7, "sim", 0), derive(7, "init", 0));
        assert_ne!(derive(7, "sim", 0), derive(8, "sim", 0));
    }

    #[test]
    fn streams_replay() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(rng(3, "x", 2), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(rng(3, "x", 2), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
    }
}
