use alloc::vec::Vec;

use super::block::{conditional_block, linear};
use super::{block_prefix, EncoderConfig};
use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::params::Binding;
use crate::tensor::Tensor;

/// Reconstruction decoder. Places `z_fuse` at visible slots and the
/// learnable mask token at masked slots, adds the shared positional
/// embedding, runs the decoder blocks and the `D → C` head, then gathers
/// the masked positions: `[B, M, C]`.
pub fn decode_masked(
    g: &mut Graph,
    p: &mut Binding,
    z_fuse: Var,
    visible_idx: &[Vec<usize>],
    masked_idx: &[Vec<usize>],
    temb: Var,
    config: &EncoderConfig,
) -> Result<Var> {
    let n = config.n_tokens();
    let b = visible_idx.len();
    for (v, m) in visible_idx.iter().zip(masked_idx) {
        if v.len() + m.len() != n {
            return Err(shape_err!("decode_masked", "{} visible + {} masked != {n} tokens", v.len(), m.len()));
        }
    }
    let placed = g.scatter_rows(z_fuse, visible_idx, n)?;
    let mut indicator = Tensor::zeros([b, n, 1]);
    for (s, row) in masked_idx.iter().enumerate() {
        for &i in row {
            if i >= n {
                return Err(shape_err!("decode_masked", "masked index {i} out of range {n}"));
            }
            indicator.data_mut()[s * n + i] = 1.0;
        }
    }
    let indicator = g.constant(indicator);
    let token = p.get(g, "recon/mask_token")?;
    let masked = g.mul(indicator, token)?;
    let pos = p.get(g, "recon/pos")?;
    let x = g.add(placed, masked)?;
    let mut x = g.add(x, pos)?;
    for i in 0..config.recon_depth {
        x = conditional_block(g, p, &block_prefix("recon", i), x, temb, config.heads)?;
    }
    let out = linear(g, p, "recon/head", x)?;
    g.gather_rows(out, masked_idx)
}

/// Diffusion decoder: block `i` first adds encoder activation
/// `skips[len − 1 − i]` (deepest first), then the `D → C` head predicts
/// the clean visible tokens `[B, N_vis, C]`.
pub fn diff_decode(g: &mut Graph, p: &mut Binding, z_fuse: Var, skips: &[Var], temb: Var, config: &EncoderConfig) -> Result<Var> {
    let mut h = z_fuse;
    for i in 0..config.diff_depth {
        if let Some(&skip) = skips.len().checked_sub(1 + i).and_then(|j| skips.get(j)) {
            h = g.add(h, skip)?;
        }
        h = conditional_block(g, p, &block_prefix("diff", i), h, temb, config.heads)?;
    }
    linear(g, p, "diff/head", h)
}
