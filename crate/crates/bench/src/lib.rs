//! Shared fixtures for the criterion benches.

use jdetrack_core::metriclearn::TripletBatch;
use jdetrack_core::synth::{self, Scenario, ScenarioConfig, SynthSequence};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense random cost matrix with entries in `[0, 1)`.
pub fn cost_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0))
}

/// Crowded sequence with `n_objects` targets and 128-d embeddings.
pub fn crowded(n_objects: usize, n_frames: u32, seed: u64) -> SynthSequence {
    let cfg = ScenarioConfig {
        n_objects,
        n_frames,
        seed,
        box_jitter_std: 1.0,
        emb_noise_std: 0.05,
        ..ScenarioConfig::preset(Scenario::Crowded)
    };
    synth::generate(&cfg).expect("valid preset")
}

/// Labeled batch of `n` samples over `ids` identities in `dim` dimensions.
pub fn batch(n: usize, dim: usize, ids: usize, seed: u64) -> TripletBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = DMatrix::from_fn(ids, dim, |_, _| rng.random_range(-1.0..1.0));
    let labels: Vec<i64> = (0..n).map(|i| (i % ids) as i64).collect();
    let embs = DMatrix::from_fn(n, dim, |i, c| centers[(i % ids, c)] + rng.random_range(-0.5..0.5));
    let conf = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    TripletBatch::new(embs, labels, conf).expect("consistent batch")
}
