//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waveletcond::diffusion::TrainConfig;
use waveletcond::Tensor;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// The default toy model with a short run, for timing single training steps.
pub fn step_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        clips: 4,
        val_clips: 1,
        log_every: 0,
        ..Default::default()
    }
}
