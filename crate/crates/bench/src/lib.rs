//! Seeded fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochgame_core::generators::random_nowak;
use stochgame_core::StochasticGameSpec;

/// Two-player, two-action Nowak game with one atom.
pub fn nowak(seed: u64, cells: usize, components: usize) -> StochasticGameSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_nowak(&mut rng, cells, components, 1, &[2, 2], 0.9).expect("generator parameters are valid")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
