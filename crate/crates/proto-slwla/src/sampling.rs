//! Seeded sampling helpers. Hand-rolled Fisher–Yates so episode identity is a
//! stable function of the seed, independent of `rand`'s internal algorithms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::fnv1a64;

/// RNG for one named purpose, derived from the master seed. Distinct tags
/// give independent streams.
pub fn seeded_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a64(&[&seed.to_le_bytes(), tag.as_bytes()]))
}

/// Derived sub-seed for a named purpose plus an index (e.g. one per epoch).
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    fnv1a64(&[&seed.to_le_bytes(), tag.as_bytes(), &index.to_le_bytes()])
}

/// Full Fisher–Yates permutation of `0..n`.
pub fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// `k` distinct indices from `0..n`, uniformly without replacement.
pub fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// `k` distinct elements of `pool`, uniformly without replacement.
pub fn sample_from<T: Clone>(rng: &mut ChaCha8Rng, pool: &[T], k: usize) -> Vec<T> {
    sample_indices(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect()
}
