//! Reproducible random streams. Every (purpose, index) pair maps to its own
//! ChaCha stream, so work split across threads draws the same numbers no
//! matter how it is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for `(a, b)` under the master `seed`.
pub fn substream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    rng.set_stream(splitmix(splitmix(a) ^ b.rotate_left(17)));
    rng
}

/// Derives a child seed, e.g. one per replication.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = substream(7, 1, 2).random();
        let b: u64 = substream(7, 1, 2).random();
        let c: u64 = substream(7, 2, 1).random();
        let d: u64 = substream(8, 1, 2).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
    }
}
