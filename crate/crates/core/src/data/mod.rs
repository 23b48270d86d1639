//! Hyperspectral cubes and the preprocessing that turns them into tokens.

mod cube;
mod fewshot;
mod pca;
mod synth;
mod tokens;

pub use cube::HsiCube;
pub use fewshot::{sample_few_shot, FewShotSplit};
pub use pca::{fit_pca, symmetric_eigen, PcaModel};
pub use synth::{make_synthetic_domains, SynthConfig};
pub use tokens::{extract_patches, extract_tokens, masked_count, sample_mask, TokenBatch};

/// Pixel coordinate `(row, col)`.
pub type Pixel = (usize, usize);
