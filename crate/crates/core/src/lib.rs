//! Self-supervised cross-domain hyperspectral classification.
//!
//! The crate is `no_std` with `alloc`. Everything here is pure computation:
//! a small reverse-mode tensor tape with a real FFT, the diffusion forward
//! process, hyperspectral preprocessing (PCA, windowed patch tokens, few-shot
//! splits, synthetic domains), the dual-branch S²Former encoder, masked
//! reconstruction pretraining with a frequency-domain constraint, and
//! diffusion-aligned teacher/student fine-tuning. File formats, checkpoints
//! and the experiment CLI live in the `s2daft` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod daft;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod fft;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod pretrain;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::ParamStore;
pub use tensor::Tensor;
