//! Shared inputs for the benchmarks.

use ddsc_core::data_model::{NoiseModel, TrajectoryData};
use ddsc_core::sim::{fixture, generate_init_data};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Initialization data of the five benchmark modes with their noise models.
pub fn init_data(q: f64, t: usize, seed: u64) -> (Vec<TrajectoryData>, Vec<NoiseModel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<_> = fixture::modes().iter().map(|m| generate_init_data(&mut rng, m, t, 1.0, q).unwrap()).collect();
    let noise = data.iter().map(|d| NoiseModel::energy_bound(q, d.n(), d.len()).unwrap()).collect();
    (data, noise)
}

/// An online record of `len` steps from benchmark mode `mode` (0-based).
pub fn online(mode: usize, len: usize, q: f64, seed: u64) -> TrajectoryData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_init_data(&mut rng, &fixture::modes()[mode], len, 1.0, q).unwrap()
}
