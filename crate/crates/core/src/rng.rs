//! Deterministic RNG stream derivation.
//!
//! Every replicate-level task (a bootstrap replicate, a Monte Carlo
//! replication, a simulated panel) draws from its own ChaCha stream derived
//! from `(root seed, task index)`. Streams depend only on those two values
//! — never on thread scheduling or worker count — which is what makes
//! parallel runs byte-identical to sequential ones.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 finalizer; a bijection on `u64`, so distinct indices always
/// yield distinct stream seeds for a fixed root.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the `u64` seed of sub-stream `index` under `root`.
///
/// Injective in `index` for fixed `root`, and well-mixed in both arguments
/// so that nearby `(root, index)` pairs share no structure.
pub fn stream_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index ^ 0x517C_C1B7_2722_0A95))
}

/// Construct the ChaCha stream for sub-task `index` under `root`.
///
/// The full 256-bit state is expanded from [`stream_seed`] so two streams
/// never overlap in practice.
pub fn stream(root: u64, index: u64) -> ChaCha8Rng {
    let mut s = stream_seed(root, index);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
