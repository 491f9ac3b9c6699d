//! Seeded parallel path execution.
//!
//! Every Monte Carlo path gets its own generator, derived from the master
//! seed and the path index by a fixed SplitMix64 expansion. Workers run in
//! parallel; results are collected in path order and reduced sequentially,
//! so output is byte-identical at any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit path seed: SplitMix64 stream seeded by `master`, advanced to
/// position `path + 1`.
pub fn derive_path_seed(master: u64, path: u64) -> u64 {
    let mut state = master ^ (path.wrapping_add(1)).wrapping_mul(GOLDEN);
    splitmix64(&mut state)
}

/// Generator for an already-derived 64-bit seed.
pub fn seed_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Full 256-bit generator state for one path (four further SplitMix64 draws).
pub fn path_rng(master: u64, path: u64) -> ChaCha8Rng {
    let mut state = derive_path_seed(master, path);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Run `n_paths` independent workers and return their results in path order.
///
/// The worker receives `(path_index, rng)`. Paths are scheduled on the
/// current rayon pool; ordering of the output is by index, not by completion.
pub fn run_paths<T, F>(n_paths: usize, master_seed: u64, worker: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, ChaCha8Rng) -> T + Sync,
{
    (0..n_paths)
        .into_par_iter()
        .map(|i| worker(i, path_rng(master_seed, i as u64)))
        .collect()
}
