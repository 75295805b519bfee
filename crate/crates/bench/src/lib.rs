//! Shared fixtures for the benchmarks in `benches/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vnafford::datagen::stream_rng;
use vnafford::sim::{generate_specs, render_cloud, ObjectFamily, ObjectState};
use vnafford::PointCloud;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A closed drawer and a cloud of `n` points rendered from it.
pub fn drawer_cloud(n: usize, seed: u64) -> (ObjectState, PointCloud) {
    let spec = generate_specs(ObjectFamily::Drawer, 1, seed)[0];
    let state = spec.initial_state(true);
    let cloud = render_cloud(&state, n, &mut stream_rng(seed, 0, 0)).expect("render");
    (state, cloud)
}
