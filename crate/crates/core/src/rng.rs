//! Reproducible per-path random streams.
//!
//! Every simulated path owns a ChaCha stream derived purely from
//! `(master_seed, path_id, attempt)`. The derivation never depends on thread
//! scheduling, so ensembles are bit-identical for any worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the stream for one (path, attempt) pair.
pub fn path_stream(master_seed: u64, path_id: u64, attempt: u32) -> ChaCha12Rng {
    let mut state = master_seed
        ^ path_id.wrapping_mul(0xa076_1d64_78bd_642f)
        ^ (attempt as u64).wrapping_mul(0xe703_7ed1_a0b4_28db);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

/// Stream for auxiliary deterministic draws (frozen quadrature nodes etc.),
/// namespaced away from path streams.
pub fn aux_stream(master_seed: u64, tag: u64) -> ChaCha12Rng {
    path_stream(master_seed ^ 0x5bd1_e995_9e37_79b9, tag, u32::MAX)
}
