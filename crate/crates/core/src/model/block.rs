use alloc::format;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::Binding;

const NORM_EPS: f64 = 1e-5;

/// `x · {prefix}/w + {prefix}/b` (bias optional).
pub fn linear(g: &mut Graph, p: &mut Binding, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(g, &format!("{prefix}/w"))?;
    let y = g.matmul(x, w)?;
    let bias = format!("{prefix}/b");
    if p.store().contains(&bias) {
        let b = p.get(g, &bias)?;
        g.add(y, b)
    } else {
        Ok(y)
    }
}

/// `α(t) ⊙ normalize(x) + β(t)`, with `α`, `β` affine in the time encoding.
/// `temb` is `[B, 1, D]`; `x` is `[B, T, D]`.
pub fn ada_norm(g: &mut Graph, p: &mut Binding, prefix: &str, x: Var, temb: Var) -> Result<Var> {
    let n = g.layer_norm(x, None, None, NORM_EPS)?;
    let aw = p.get(g, &format!("{prefix}/alpha_w"))?;
    let ab = p.get(g, &format!("{prefix}/alpha_b"))?;
    let bw = p.get(g, &format!("{prefix}/beta_w"))?;
    let bb = p.get(g, &format!("{prefix}/beta_b"))?;
    let alpha = g.matmul(temb, aw)?;
    let alpha = g.add(alpha, ab)?;
    let beta = g.matmul(temb, bw)?;
    let beta = g.add(beta, bb)?;
    let y = g.mul(n, alpha)?;
    g.add(y, beta)
}

fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let r = g.reshape(x, &[b, t, heads, d / heads])?;
    g.permute(r, &[0, 2, 1, 3])
}

fn merge_heads(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, h, t, dh) = (s[0], s[1], s[2], s[3]);
    let r = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(r, &[b, t, h * dh])
}

/// `Softmax(Q Kᵀ / √d) V` per head; queries `[B, Tq, D]`, keys and values
/// `[B, Tk, D]` already projected.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let d = g.shape(q)[2];
    let head_dim = d / heads;
    let (qh, kh, vh) = (split_heads(g, q, heads)?, split_heads(g, k, heads)?, split_heads(g, v, heads)?);
    let kt = g.transpose(kh)?;
    let scores = g.matmul(qh, kt)?;
    let scores = g.scale(scores, 1.0 / libm::sqrt(head_dim as f64))?;
    let weights = g.softmax(scores, 3)?;
    let ctx = g.matmul(weights, vh)?;
    merge_heads(g, ctx)
}

fn self_attention(g: &mut Graph, p: &mut Binding, prefix: &str, x: Var, heads: usize) -> Result<Var> {
    let q = linear_named(g, p, prefix, "q", x)?;
    let k = linear_named(g, p, prefix, "k", x)?;
    let v = linear_named(g, p, prefix, "v", x)?;
    let ctx = attention(g, q, k, v, heads)?;
    linear_named(g, p, prefix, "o", ctx)
}

fn linear_named(g: &mut Graph, p: &mut Binding, prefix: &str, m: &str, x: Var) -> Result<Var> {
    let w = p.get(g, &format!("{prefix}/w{m}"))?;
    let b = p.get(g, &format!("{prefix}/b{m}"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

pub fn feed_forward(g: &mut Graph, p: &mut Binding, prefix: &str, x: Var) -> Result<Var> {
    let w1 = p.get(g, &format!("{prefix}/w1"))?;
    let b1 = p.get(g, &format!("{prefix}/b1"))?;
    let w2 = p.get(g, &format!("{prefix}/w2"))?;
    let b2 = p.get(g, &format!("{prefix}/b2"))?;
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.gelu(h)?;
    let y = g.matmul(h, w2)?;
    g.add(y, b2)
}

/// Pre-norm transformer block whose norms are conditioned on the timestep:
///
/// ```text
/// h   = x + Attn(AdaNorm₁(x, t))
/// out = h + FFN(AdaNorm₂(h, t))
/// ```
pub fn conditional_block(g: &mut Graph, p: &mut Binding, prefix: &str, x: Var, temb: Var, heads: usize) -> Result<Var> {
    let n1 = ada_norm(g, p, &format!("{prefix}/norm1"), x, temb)?;
    let a = self_attention(g, p, &format!("{prefix}/attn"), n1, heads)?;
    let h = g.add(x, a)?;
    let n2 = ada_norm(g, p, &format!("{prefix}/norm2"), h, temb)?;
    let f = feed_forward(g, p, &format!("{prefix}/ffn"), n2)?;
    g.add(h, f)
}
