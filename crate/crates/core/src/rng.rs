//! Seeded random streams.
//!
//! Every game owns a 64-bit game seed derived from a run-level master seed and
//! the game's index. From that seed, independent ChaCha8 streams are opened by
//! stream id, so game generation, occlusion draws, emissions and agent
//! decisions never share a sequence. Replaying the same choices under the same
//! game seed reproduces availabilities and outcomes exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every stream in the crate.
pub type StreamRng = ChaCha8Rng;

/// Substream identifiers. The numeric values are part of the replay contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Latent biased arm and horizon.
    Generation = 0,
    /// Per-round availability masks.
    Occlusion = 1,
    /// Bernoulli emissions, one uniform per round.
    Emission = 2,
    /// Agent-side randomness (stochastic policies).
    Agent = 3,
    /// Dataset splits, optimizer restarts and other run-level draws.
    Auxiliary = 4,
}

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for game `index` of a run seeded with `master`.
pub fn game_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Opens substream `stream` of `seed`.
pub fn stream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
