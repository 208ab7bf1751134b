//! Deterministic stream seeding for parallel Monte Carlo work.
//!
//! Every stochastic routine in this crate draws from a ChaCha12 generator, a
//! counter-based stream cipher with published constants. Independent work
//! items (trajectories, noise samples) get independent streams derived from
//! the master seed and the item index, so results do not depend on thread
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator for a single indexed stream under `master_seed`.
///
/// Identical `(master_seed, index)` pairs always yield bit-identical draws.
pub fn stream_rng(master_seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// The unsplit master generator (stream 0).
pub fn master_rng(master_seed: u64) -> ChaCha12Rng {
    stream_rng(master_seed, 0)
}
