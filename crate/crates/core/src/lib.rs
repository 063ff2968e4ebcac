//! Wavelet-domain audio conditioning and sub-band feature gating for a toy
//! audio-driven video diffusion model, with the evaluation metrics and
//! dataset-manifest tooling around it.

pub mod autodiff;
pub mod datakit;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod ops;
pub mod msm;
pub mod optim;
pub mod params;
pub mod sfm;
pub mod sgtf;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
