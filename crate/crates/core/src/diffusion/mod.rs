//! Toy denoising-diffusion harness: noise schedule, synthetic data, a small
//! conditioned UNet, training, sampling and the module ablation.

pub mod ablation;
pub mod config;
pub mod data;
pub mod sample;
pub mod schedule;
pub mod train;
pub mod unet;

pub use config::TrainConfig;
pub use data::{make_synthetic_dataset, Clip, Dataset, SyntheticOptions};
pub use sample::{sample, Denoiser};
pub use schedule::{forward_diffuse, NoiseSchedule};
pub use train::{train, train_loss, TrainOutcome};
pub use unet::{unet_forward, Flags, ToyUNetParams, UNetDims};
