use alloc::format;
use alloc::vec::Vec;

use super::block::{attention, conditional_block, linear};
use super::{block_prefix, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::Binding;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[B, N_vis, D]`.
    pub z_fuse: Var,
    /// Outputs of the spatial-path conditional blocks followed by the
    /// fusion blocks, shallow to deep; each `[B, N_vis, D]`.
    pub skips: Vec<Var>,
    /// `[B, D]` class-token feature, when requested.
    pub cls: Option<Var>,
}

/// `X_vis · W_spa + T` for visible tokens `[B, N_vis, C]`.
pub fn embed_spatial(g: &mut Graph, p: &mut Binding, x_vis: Var, temb: Var) -> Result<Var> {
    let w = p.get(g, "encoder/spa/embed")?;
    let z = g.matmul(x_vis, w)?;
    g.add(z, temb)
}

/// Spectral convolution of every token, projection to `D`, plus `T`.
pub fn embed_spectral(g: &mut Graph, p: &mut Binding, tokens: Var, temb: Var) -> Result<Var> {
    let k = p.get(g, "encoder/spec/conv")?;
    let w = p.get(g, "encoder/spec/proj")?;
    let conv = g.conv1d(tokens, k)?;
    let z = g.matmul(conv, w)?;
    g.add(z, temb)
}

/// Applies `depth` conditional blocks under `base`, returning every
/// block's output (the last one is the branch output).
pub fn run_branch(g: &mut Graph, p: &mut Binding, base: &str, z0: Var, temb: Var, depth: usize, heads: usize) -> Result<Vec<Var>> {
    let mut outs = Vec::with_capacity(depth);
    let mut z = z0;
    for i in 0..depth {
        z = conditional_block(g, p, &block_prefix(base, i), z, temb, heads)?;
        outs.push(z);
    }
    Ok(outs)
}

/// One bidirectional cross-attention layer. Each stream queries the
/// mean-pooled summary of the other and adds the result residually.
pub fn bi_cross_attend(g: &mut Graph, p: &mut Binding, prefix: &str, z_spa: Var, z_spec: Var, heads: usize) -> Result<(Var, Var)> {
    if g.shape(z_spa)[1] == 0 || g.shape(z_spec)[1] == 0 {
        return Err(Error::Contract("cross-attention needs at least one token per stream".into()));
    }
    let pooled_spec = g.mean_axis(z_spec, 1, true)?;
    let pooled_spa = g.mean_axis(z_spa, 1, true)?;

    let wq = p.get(g, &format!("{prefix}/wq"))?;
    let wk = p.get(g, &format!("{prefix}/wk"))?;
    let wv = p.get(g, &format!("{prefix}/wv"))?;
    let q = g.matmul(z_spa, wq)?;
    let k = g.matmul(pooled_spec, wk)?;
    let v = g.matmul(pooled_spec, wv)?;
    let attn_spa = attention(g, q, k, v, heads)?;
    let spa_hat = g.add(z_spa, attn_spa)?;

    let wq2 = p.get(g, &format!("{prefix}/wq2"))?;
    let wk2 = p.get(g, &format!("{prefix}/wk2"))?;
    let wv2 = p.get(g, &format!("{prefix}/wv2"))?;
    let q2 = g.matmul(z_spec, wq2)?;
    let k2 = g.matmul(pooled_spa, wk2)?;
    let v2 = g.matmul(pooled_spa, wv2)?;
    let attn_spec = attention(g, q2, k2, v2, heads)?;
    let spec_hat = g.add(z_spec, attn_spec)?;
    Ok((spa_hat, spec_hat))
}

/// Pairs each visible spatial token with the sample's mean spectral token,
/// concatenates channels and maps `2D → D`.
pub fn fuse_concat(g: &mut Graph, p: &mut Binding, spa_hat: Var, spec_hat: Var) -> Result<Var> {
    let shape = g.shape(spa_hat).to_vec();
    let pooled = g.mean_axis(spec_hat, 1, true)?;
    let zeros = g.constant(Tensor::zeros(shape));
    let spread = g.add(zeros, pooled)?;
    let cat = g.concat(&[spa_hat, spread], 2)?;
    linear(g, p, "encoder/fuse/linear", cat)
}

/// Full fusion stage: concat + affine, optional class token, conditional
/// blocks, LayerNorm and output map. Returns the fused sequence (class
/// token first when present) and each fusion block's output.
pub fn fuse(
    g: &mut Graph,
    p: &mut Binding,
    spa_hat: Var,
    spec_hat: Var,
    temb: Var,
    with_class_token: bool,
    config: &EncoderConfig,
) -> Result<(Var, Vec<Var>)> {
    let mut z = fuse_concat(g, p, spa_hat, spec_hat)?;
    if with_class_token {
        let b = g.shape(z)[0];
        let cls = p.get(g, "encoder/cls")?;
        let zeros = g.constant(Tensor::zeros([b, 1, config.dim]));
        let cls = g.add(zeros, cls)?;
        z = g.concat(&[cls, z], 1)?;
    }
    let outs = run_branch(g, p, "encoder/fuse", z, temb, config.fusion_depth, config.heads)?;
    let last = outs.last().copied().unwrap_or(z);
    let gamma = p.get(g, "encoder/fuse/norm/gamma")?;
    let beta = p.get(g, "encoder/fuse/norm/beta")?;
    let n = g.layer_norm(last, Some(gamma), Some(beta), 1e-5)?;
    let out = linear(g, p, "encoder/fuse/out", n)?;
    Ok((out, outs))
}

/// Runs the whole encoder on (possibly noised) tokens `[B, N, C]`.
/// `temb` is the `[B, 1, D]` time encoding.
pub fn encode(
    g: &mut Graph,
    p: &mut Binding,
    tokens: Var,
    visible_idx: &[Vec<usize>],
    temb: Var,
    config: &EncoderConfig,
    with_class_token: bool,
) -> Result<EncoderOutput> {
    let x_vis = g.gather_rows(tokens, visible_idx)?;
    let z_spa0 = embed_spatial(g, p, x_vis, temb)?;
    let spa = run_branch(g, p, "encoder/spa", z_spa0, temb, config.branch_depth, config.heads)?;
    let z_spec0 = embed_spectral(g, p, tokens, temb)?;
    let spec = run_branch(g, p, "encoder/spec", z_spec0, temb, config.branch_depth, config.heads)?;

    let mut z_spa = spa.last().copied().unwrap_or(z_spa0);
    let mut z_spec = spec.last().copied().unwrap_or(z_spec0);
    if config.cross_attention {
        for l in 0..config.cross_layers {
            (z_spa, z_spec) = bi_cross_attend(g, p, &format!("encoder/cross{l}"), z_spa, z_spec, config.heads)?;
        }
    }

    let (fused, fuse_outs) = fuse(g, p, z_spa, z_spec, temb, with_class_token, config)?;
    let mut skips = spa;
    let (z_fuse, cls) = if with_class_token {
        let n = g.shape(fused)[1];
        let b = g.shape(fused)[0];
        let cls = g.slice(fused, 1, 0, 1)?;
        let cls = g.reshape(cls, &[b, config.dim])?;
        (g.slice(fused, 1, 1, n - 1)?, Some(cls))
    } else {
        skips.extend(fuse_outs);
        (fused, None)
    };
    Ok(EncoderOutput { z_fuse, skips, cls })
}
