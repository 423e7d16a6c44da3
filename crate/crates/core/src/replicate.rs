//! Deterministic parallel replication.
//!
//! Replication `r` always draws from ChaCha stream `r` of the experiment seed,
//! and results come back in replication order, so output does not depend on
//! the size of the worker pool.

use rayon::prelude::*;

pub fn replicate<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..count as u64).into_par_iter().map(f).collect()
}

/// SplitMix64 mix of `seed` and `tag`, for keying sub-experiments.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
