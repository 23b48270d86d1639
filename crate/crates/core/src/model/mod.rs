//! The S²Former encoder and its pretraining decoders.
//!
//! Parameter names (all under one [`ParamStore`]):
//!
//! | prefix                 | contents                                     |
//! |------------------------|----------------------------------------------|
//! | `encoder/spa`          | `embed` plus conditional blocks `block{i}`   |
//! | `encoder/spec`         | `conv`, `proj`, blocks                       |
//! | `encoder/cross{l}`     | `wq wk wv` (spectral→spatial), `wq2 wk2 wv2` |
//! | `encoder/fuse`         | `linear`, blocks, `norm`, `out`              |
//! | `encoder/cls`          | class token, fine-tuning only                |
//! | `recon`                | `mask_token`, `pos`, blocks, `head`          |
//! | `diff`                 | blocks, `head`                               |
//! | `head`, `proj`         | classifier and optional teacher projection   |

mod block;
mod decoder;
mod encoder;

use alloc::format;
use alloc::string::String;

pub use block::{ada_norm, attention, conditional_block, feed_forward, linear};
pub use decoder::{decode_masked, diff_decode};
pub use encoder::{bi_cross_attend, embed_spatial, embed_spectral, encode, fuse, fuse_concat, run_branch, EncoderOutput};

use crate::error::{param_err, Result};
use crate::params::ParamStore;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Widths and depths of the encoder and decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Token channel count `C` (after PCA).
    pub channels: usize,
    /// Model width `D`.
    pub dim: usize,
    pub heads: usize,
    /// Spectral convolution taps, odd.
    pub kernel: usize,
    /// Conditional blocks per branch.
    pub branch_depth: usize,
    /// Stacked bidirectional cross-attention layers.
    pub cross_layers: usize,
    pub fusion_depth: usize,
    pub recon_depth: usize,
    pub diff_depth: usize,
    /// Feed-forward hidden width as a multiple of `D`.
    pub ffn_mult: usize,
    pub window: usize,
    pub patch: usize,
    /// `false` replaces cross-attention with a pass-through.
    pub cross_attention: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: 30,
            dim: 32,
            heads: 4,
            kernel: 3,
            branch_depth: 2,
            cross_layers: 2,
            fusion_depth: 2,
            recon_depth: 2,
            diff_depth: 4,
            ffn_mult: 2,
            window: 9,
            patch: 3,
            cross_attention: true,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    /// Tokens per sample, `(window / patch)²`.
    pub fn n_tokens(&self) -> usize {
        let g = self.window / self.patch.max(1);
        g * g
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.dim == 0 || self.heads == 0 {
            return Err(param_err!("channels, dim and heads must be positive"));
        }
        if self.head_dim() * self.heads != self.dim {
            return Err(param_err!("dim {} is not heads {} x head_dim", self.dim, self.heads));
        }
        if !self.dim.is_multiple_of(2) {
            return Err(param_err!("dim must be even for the time encoding, got {}", self.dim));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(param_err!("kernel must be odd, got {}", self.kernel));
        }
        if self.window.is_multiple_of(2) || self.patch == 0 || !self.window.is_multiple_of(self.patch) {
            return Err(param_err!("window {} must be odd and divisible by patch {}", self.window, self.patch));
        }
        Ok(())
    }
}

fn normal(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    Tensor::randn(shape.to_vec(), std, rng)
}

const ATTN_STD: f64 = 0.02;

fn xavier(fan_in: usize) -> f64 {
    1.0 / libm::sqrt(fan_in as f64)
}

pub(crate) fn init_block(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, rng: &mut Rng) {
    let d = config.dim;
    let hidden = d * config.ffn_mult;
    for norm in ["norm1", "norm2"] {
        store.insert(format!("{prefix}/{norm}/alpha_w"), Tensor::zeros([d, d]));
        store.insert(format!("{prefix}/{norm}/alpha_b"), Tensor::ones([d]));
        store.insert(format!("{prefix}/{norm}/beta_w"), Tensor::zeros([d, d]));
        store.insert(format!("{prefix}/{norm}/beta_b"), Tensor::zeros([d]));
    }
    for m in ["q", "k", "v", "o"] {
        store.insert(format!("{prefix}/attn/w{m}"), normal(&[d, d], ATTN_STD, rng));
        store.insert(format!("{prefix}/attn/b{m}"), Tensor::zeros([d]));
    }
    store.insert(format!("{prefix}/ffn/w1"), normal(&[d, hidden], ATTN_STD, rng));
    store.insert(format!("{prefix}/ffn/b1"), Tensor::zeros([hidden]));
    store.insert(format!("{prefix}/ffn/w2"), normal(&[hidden, d], ATTN_STD, rng));
    store.insert(format!("{prefix}/ffn/b2"), Tensor::zeros([d]));
}

fn init_linear(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, std: f64, rng: &mut Rng) {
    store.insert(format!("{prefix}/w"), normal(&[fan_in, fan_out], std, rng));
    store.insert(format!("{prefix}/b"), Tensor::zeros([fan_out]));
}

pub fn block_prefix(base: &str, i: usize) -> String {
    format!("{base}/block{i}")
}

/// Encoder plus reconstruction and diffusion decoders.
///
/// Attention and feed-forward weights are drawn from `N(0, 0.02²)`; the
/// adaptive-norm generators start at `α(t) = 1, β(t) = 0`. Data-path
/// embeddings use `1/√fan_in`; the spectral convolution starts as a
/// perturbed identity.
pub fn init_pretrain_params(config: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let (c, d) = (config.channels, config.dim);
    let mut rng = rng::stream(seed, &[0x696e_6974]);
    let mut store = ParamStore::new();
    store.insert("encoder/spa/embed", normal(&[c, d], xavier(c), &mut rng));
    let mut conv = normal(&[config.kernel, c], ATTN_STD, &mut rng);
    let centre = config.kernel / 2;
    conv.data_mut()[centre * c..(centre + 1) * c].iter_mut().for_each(|v| *v += 1.0);
    store.insert("encoder/spec/conv", conv);
    store.insert("encoder/spec/proj", normal(&[c, d], xavier(c), &mut rng));
    for i in 0..config.branch_depth {
        init_block(&mut store, &block_prefix("encoder/spa", i), config, &mut rng);
        init_block(&mut store, &block_prefix("encoder/spec", i), config, &mut rng);
    }
    for l in 0..config.cross_layers {
        for m in ["wq", "wk", "wv", "wq2", "wk2", "wv2"] {
            store.insert(format!("encoder/cross{l}/{m}"), normal(&[d, d], ATTN_STD, &mut rng));
        }
    }
    init_linear(&mut store, "encoder/fuse/linear", 2 * d, d, xavier(2 * d), &mut rng);
    for i in 0..config.fusion_depth {
        init_block(&mut store, &block_prefix("encoder/fuse", i), config, &mut rng);
    }
    store.insert("encoder/fuse/norm/gamma", Tensor::ones([d]));
    store.insert("encoder/fuse/norm/beta", Tensor::zeros([d]));
    init_linear(&mut store, "encoder/fuse/out", d, d, xavier(d), &mut rng);

    store.insert("recon/mask_token", normal(&[1, 1, d], ATTN_STD, &mut rng));
    store.insert("recon/pos", normal(&[config.n_tokens(), d], ATTN_STD, &mut rng));
    for i in 0..config.recon_depth {
        init_block(&mut store, &block_prefix("recon", i), config, &mut rng);
    }
    init_linear(&mut store, "recon/head", d, c, xavier(d), &mut rng);
    for i in 0..config.diff_depth {
        init_block(&mut store, &block_prefix("diff", i), config, &mut rng);
    }
    init_linear(&mut store, "diff/head", d, c, xavier(d), &mut rng);
    Ok(store)
}

/// Class token for fine-tuning, shared by teacher and student at start.
pub fn init_class_token(config: &EncoderConfig, seed: u64) -> Tensor {
    normal(&[1, 1, config.dim], ATTN_STD, &mut rng::stream(seed, &[0x636c_73]))
}

/// Classifier `D → classes`, and the optional teacher projection.
pub fn init_head_params(config: &EncoderConfig, classes: usize, teacher_dim: Option<usize>, seed: u64) -> ParamStore {
    let mut rng = rng::stream(seed, &[0x6865_6164]);
    let mut store = ParamStore::new();
    init_linear(&mut store, "head", config.dim, classes, xavier(config.dim), &mut rng);
    if let Some(dt) = teacher_dim.filter(|&dt| dt != config.dim) {
        init_linear(&mut store, "proj", dt, config.dim, xavier(dt), &mut rng);
    }
    store
}
