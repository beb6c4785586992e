//! Keyed, counter-style random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is
//! derived from a root seed plus a path of integers (tree path, trial index,
//! step number). Two streams with different paths are independent, and the
//! value of a stream never depends on the order in which other streams are
//! consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of integers into a root seed.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    let mut k = splitmix(seed);
    for (depth, &p) in path.iter().enumerate() {
        k = splitmix(k ^ splitmix(p.wrapping_add((depth as u64 + 1).wrapping_mul(GOLDEN))));
    }
    k
}

pub fn keyed_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, path))
}

/// Partial Fisher–Yates: `k` distinct indices from `0..n`, in draw order.
pub fn sample_without_replacement<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} of {n} without replacement");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
