//! Deterministic seed derivation.
//!
//! Every randomized procedure in this crate draws from a `ChaCha8` stream
//! whose seed is derived from a single root seed plus a list of integer
//! tags (replicate index, group index, permutation chunk, ...). Results are
//! therefore reproducible from one seed and independent of thread count:
//! parallel workers never share an RNG, they derive their own stream.
//!
//! The derivation is fixed so that other implementations can reproduce the
//! same stream seeds:
//!
//! ```text
//! mix(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!         z ^= z >> 27; z *= 0x94D049BB133111EB;
//!         z ^= z >> 31                     (wrapping, 64-bit)
//! derive(root, tags): acc = mix(root ^ 0x9E3779B97F4A7C15)
//!                     for t in tags: acc = mix((acc + 0x9E3779B97F4A7C15) ^ t)
//! ```

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags, one per randomized subsystem.
pub mod tag {
    /// Per-replicate scenario stream.
    pub const REPLICATE: u64 = 1;
    /// Per-group sampling stream within one dataset draw.
    pub const GROUP: u64 = 2;
    /// Sign-flip permutation chunks.
    pub const PERMUTATION: u64 = 3;
    /// Bootstrap resampling rounds.
    pub const BOOTSTRAP: u64 = 4;
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream seed from a root seed and a tag path.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(root ^ GOLDEN);
    for &t in tags {
        acc = mix(acc.wrapping_add(GOLDEN) ^ t);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_tags_give_distinct_seeds() {
        let a = derive_seed(7, &[tag::REPLICATE, 0]);
        let b = derive_seed(7, &[tag::REPLICATE, 1]);
        let c = derive_seed(7, &[tag::GROUP, 0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn derivation_is_stable() {
        // Frozen values: changing the mixing scheme is a breaking change to
        // every seeded result in the crate.
        assert_eq!(derive_seed(0, &[]), mix(GOLDEN));
        let expected = mix(mix(42 ^ GOLDEN).wrapping_add(GOLDEN) ^ 5);
        assert_eq!(derive_seed(42, &[5]), expected);
    }
}
