//! Structural properties of the encoder and decoders, checked against
//! hand-built parameter settings.

use s2daft_core::data::masked_count;
use s2daft_core::diffusion::time_embed_batch;
use s2daft_core::model::{
    bi_cross_attend, conditional_block, decode_masked, embed_spatial, embed_spectral, encode, fuse_concat, init_pretrain_params, EncoderConfig,
};
use s2daft_core::params::{Binding, ParamStore};
use s2daft_core::rng;
use s2daft_core::{Error, Graph, Tensor};

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng::seeded(seed))
}

fn small() -> EncoderConfig {
    EncoderConfig {
        channels: 4,
        dim: 8,
        heads: 2,
        kernel: 3,
        branch_depth: 1,
        cross_layers: 1,
        fusion_depth: 1,
        recon_depth: 1,
        diff_depth: 2,
        ffn_mult: 2,
        window: 3,
        patch: 1,
        cross_attention: true,
    }
}

/// Plain per-row layer normalisation without affine terms.
fn layer_norm_rows(x: &[f64], d: usize) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            row.iter().map(move |v| (v - mean) / (var + 1e-5).sqrt()).collect::<Vec<_>>()
        })
        .collect()
}

/// Zeroes the attention and feed-forward output maps of a block so it
/// reduces to the identity.
fn silence_block(store: &mut ParamStore, prefix: &str) {
    for name in ["attn/wo", "attn/bo", "ffn/w2", "ffn/b2"] {
        let t = store.get_mut(&format!("{prefix}/{name}")).unwrap();
        t.data_mut().fill(0.0);
    }
}

#[test]
fn spatial_embedding_zero_and_identity() {
    let mut store = ParamStore::new();
    store.insert("encoder/spa/embed", Tensor::zeros([4, 4]));
    let x = randn(&[2, 3, 4], 1);
    let mut g = Graph::new();
    let mut p = Binding::frozen(&store);
    let xv = g.constant(x.clone());
    let t0 = g.constant(Tensor::zeros([2, 1, 4]));
    let z = embed_spatial(&mut g, &mut p, xv, t0).unwrap();
    assert!(g.value(z).data().iter().all(|&v| v == 0.0));

    store.insert("encoder/spa/embed", Tensor::eye(4));
    let mut g = Graph::new();
    let mut p = Binding::frozen(&store);
    let xv = g.constant(x.clone());
    let t0 = g.constant(Tensor::zeros([2, 1, 4]));
    let z = embed_spatial(&mut g, &mut p, xv, t0).unwrap();
    assert!(g.value(z).max_abs_diff(&x) < 1e-12);
}

#[test]
fn spectral_embedding_delta_kernel_and_zero_kernel() {
    let (c, k) = (5, 3);
    let mut delta = Tensor::zeros([k, c]);
    delta.data_mut()[c..2 * c].fill(1.0);
    let mut store = ParamStore::new();
    store.insert("encoder/spec/conv", delta);
    store.insert("encoder/spec/proj", Tensor::eye(c));
    let x = randn(&[2, 4, c], 2);
    let mut g = Graph::new();
    let mut p = Binding::frozen(&store);
    let xv = g.constant(x.clone());
    let t0 = g.constant(Tensor::zeros([2, 1, c]));
    let z = embed_spectral(&mut g, &mut p, xv, t0).unwrap();
    assert!(g.value(z).max_abs_diff(&x) < 1e-12);

    store.insert("encoder/spec/conv", Tensor::zeros([k, c]));
    let temb = randn(&[2, 1, c], 3);
    let mut g = Graph::new();
    let mut p = Binding::frozen(&store);
    let xv = g.constant(x);
    let tv = g.constant(temb.clone());
    let z = embed_spectral(&mut g, &mut p, xv, tv).unwrap();
    let out = g.value(z);
    for s in 0..2 {
        for i in 0..4 {
            for j in 0..c {
                assert_eq!(out.at(&[s, i, j]), temb.at(&[s, 0, j]));
            }
        }
    }
}

fn run_block(store: &ParamStore, x: &Tensor, temb: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let mut p = Binding::frozen(store);
    let xv = g.constant(x.clone());
    let tv = g.constant(temb.clone());
    let y = conditional_block(&mut g, &mut p, "encoder/spa/block0", xv, tv, 2).unwrap();
    g.value(y).clone()
}

#[test]
fn silenced_block_is_identity() {
    let mut store = init_pretrain_params(&small(), 0).unwrap();
    silence_block(&mut store, "encoder/spa/block0");
    let x = randn(&[2, 5, 8], 4);
    let y = run_block(&store, &x, &randn(&[2, 1, 8], 5));
    assert!(y.max_abs_diff(&x) < 1e-12);
}

#[test]
fn unit_scale_zero_shift_block_matches_plain_transformer_block() {
    // With α(t) = 1 and β(t) = 0 the attention input is the plain layer norm,
    // so the block output minus its input depends only on x.
    let store = init_pretrain_params(&small(), 1).unwrap();
    let x = randn(&[1, 3, 8], 6);
    let a = run_block(&store, &x, &randn(&[1, 1, 8], 7));
    let b = run_block(&store, &x, &randn(&[1, 1, 8], 8));
    assert!(a.max_abs_diff(&b) < 1e-12);

    // Attention-only oracle: zero the FFN and compare against a hand computation.
    let mut store = store;
    for name in ["ffn/w2", "ffn/b2"] {
        store.get_mut(&format!("encoder/spa/block0/{name}")).unwrap().data_mut().fill(0.0);
    }
    let y = run_block(&store, &x, &Tensor::zeros([1, 1, 8]));
    let n = layer_norm_rows(x.data(), 8);
    let get = |k: &str| store.get(&format!("encoder/spa/block0/attn/{k}")).unwrap().clone();
    let proj = |w: &Tensor, bias: &Tensor| -> Vec<f64> {
        let mut out = vec![0.0; 24];
        for i in 0..3 {
            for j in 0..8 {
                out[i * 8 + j] = (0..8).map(|k| n[i * 8 + k] * w.at(&[k, j])).sum::<f64>() + bias.data()[j];
            }
        }
        out
    };
    let (q, k, v) = (proj(&get("wq"), &get("bq")), proj(&get("wk"), &get("bk")), proj(&get("wv"), &get("bv")));
    let mut heads = [0.0; 24];
    for h in 0..2 {
        for i in 0..3 {
            let scores: Vec<f64> =
                (0..3).map(|j| (0..4).map(|d| q[i * 8 + h * 4 + d] * k[j * 8 + h * 4 + d]).sum::<f64>() / 2.0).collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in 0..4 {
                heads[i * 8 + h * 4 + d] = (0..3).map(|j| e[j] / z * v[j * 8 + h * 4 + d]).sum();
            }
        }
    }
    let (wo, bo) = (get("wo"), get("bo"));
    for i in 0..3 {
        for j in 0..8 {
            let o: f64 = (0..8).map(|k| heads[i * 8 + k] * wo.at(&[k, j])).sum::<f64>() + bo.data()[j];
            assert!((y.at(&[0, i, j]) - (x.at(&[0, i, j]) + o)).abs() < 1e-10);
        }
    }
}

#[test]
fn block_is_permutation_equivariant() {
    let mut store = init_pretrain_params(&small(), 2).unwrap();
    for (name, t) in store.iter_mut() {
        if name.contains("alpha_w") || name.contains("beta_w") {
            *t = randn(t.shape(), 9);
        }
    }
    let x = randn(&[1, 5, 8], 10);
    let temb = randn(&[1, 1, 8], 11);
    let perm = [3, 0, 4, 1, 2];
    let permuted = Tensor::from_fn([1, 5, 8], |i| x.data()[perm[i / 8] * 8 + i % 8]);
    let y = run_block(&store, &x, &temb);
    let yp = run_block(&store, &permuted, &temb);
    for (i, &pi) in perm.iter().enumerate() {
        for j in 0..8 {
            assert!((yp.at(&[0, i, j]) - y.at(&[0, pi, j])).abs() < 1e-12);
        }
    }
}

#[test]
fn time_encoding_changes_output_when_generators_are_active() {
    let mut store = init_pretrain_params(&small(), 3).unwrap();
    store.insert("encoder/spa/block0/norm1/alpha_w", randn(&[8, 8], 12));
    let x = randn(&[1, 4, 8], 13);
    let t1 = time_embed_batch(&[10], 8).unwrap().reshape([1, 1, 8]).unwrap();
    let t2 = time_embed_batch(&[500], 8).unwrap().reshape([1, 1, 8]).unwrap();
    let a = run_block(&store, &x, &t1);
    let b = run_block(&store, &x, &t2);
    assert!(a.max_abs_diff(&b) > 1e-6);
}

fn encode_shapes(cfg: &EncoderConfig, n: usize, n_vis: usize, cls: bool) -> (Vec<usize>, usize) {
    let mut store = init_pretrain_params(cfg, 4).unwrap();
    store.insert("encoder/cls", Tensor::zeros([1, 1, cfg.dim]));
    let mut g = Graph::new();
    let mut p = Binding::frozen(&store);
    let tokens = g.constant(randn(&[2, n, cfg.channels], 14));
    let temb = g.constant(Tensor::zeros([2, 1, cfg.dim]));
    let vis: Vec<Vec<usize>> = vec![(0..n_vis).collect(); 2];
    let out = encode(&mut g, &mut p, tokens, &vis, temb, cfg, cls).unwrap();
    for s in &out.skips {
        assert_eq!(g.shape(*s)[1], n_vis + usize::from(cls));
    }
    if let Some(c) = out.cls {
        assert_eq!(g.shape(c), &[2, cfg.dim]);
    }
    (g.shape(out.z_fuse).to_vec(), out.skips.len())
}

#[test]
fn encoder_shapes_for_several_token_counts() {
    for cross in [true, false] {
        let cfg = EncoderConfig { cross_attention: cross, ..small() };
        for n in [1, 4, 9] {
            let (shape, skips) = encode_shapes(&cfg, n, n, false);
            assert_eq!(shape, vec![2, n, 8]);
            assert_eq!(skips, cfg.branch_depth + cfg.fusion_depth);
        }
        assert_eq!(encode_shapes(&cfg, 9, 2, false).0, vec![2, 2, 8]);
    }
}

#[test]
fn cross_attention_with_zero_values_is_identity() {
    let mut store = ParamStore::new();
    for m in ["wq", "wk", "wq2", "wk2"] {
        store.insert(format!("c/{m}"), randn(&[8, 8], 15));
    }
    store.insert("c/wv", Tensor::zeros([8, 8]));
    store.insert("c/wv2", Tensor::zeros([8, 8]));
    let (a, b) = (randn(&[2, 3, 8], 16), randn(&[2, 9, 8], 17));
    let mut g = Graph::new();
    let mut p = Binding::frozen(&store);
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let (sa, sb) = bi_cross_attend(&mut g, &mut p, "c", av, bv, 2).unwrap();
    assert!(g.value(sa).max_abs_diff(&a) < 1e-15);
    assert!(g.value(sb).max_abs_diff(&b) < 1e-15);

    let empty = g.constant(Tensor::zeros([2, 0, 8]));
    let err = bi_cross_attend(&mut g, &mut p, "c", empty, bv, 2).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn fusion_with_selector_weights_returns_spatial_stream() {
    let d = 4;
    let w = Tensor::from_fn([2 * d, d], |i| if i / d == i % d { 1.0 } else { 0.0 });
    let mut store = ParamStore::new();
    store.insert("encoder/fuse/linear/w", w);
    store.insert("encoder/fuse/linear/b", Tensor::zeros([d]));
    let (a, b) = (randn(&[2, 3, d], 18), randn(&[2, 9, d], 19));
    let mut g = Graph::new();
    let mut p = Binding::frozen(&store);
    let (av, bv) = (g.constant(a.clone()), g.constant(b));
    let z = fuse_concat(&mut g, &mut p, av, bv).unwrap();
    assert!(g.value(z).max_abs_diff(&a) < 1e-15);
}

#[test]
fn masking_counts() {
    assert_eq!(masked_count(9, 0.0), 0);
    assert_eq!(9 - masked_count(9, 0.75), 2);
    assert_eq!(masked_count(9, 1.0), 9);
}

#[test]
fn silenced_decoder_outputs_head_bias() {
    let cfg = small();
    let mut store = init_pretrain_params(&cfg, 5).unwrap();
    silence_block(&mut store, "recon/block0");
    store.insert("recon/head/w", Tensor::zeros([8, 4]));
    let bias = Tensor::new([4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    store.insert("recon/head/b", bias.clone());
    let vis = vec![vec![1, 4], vec![0, 8]];
    let masked: Vec<Vec<usize>> = vis.iter().map(|v| (0..9).filter(|i| !v.contains(i)).collect()).collect();
    let mut g = Graph::new();
    let mut p = Binding::frozen(&store);
    let z = g.constant(randn(&[2, 2, 8], 20));
    let temb = g.constant(Tensor::zeros([2, 1, 8]));
    let out = decode_masked(&mut g, &mut p, z, &vis, &masked, temb, &cfg).unwrap();
    let out = g.value(out);
    assert_eq!(out.shape(), &[2, 7, 4]);
    for row in out.data().chunks(4) {
        assert_eq!(row, bias.data());
    }
}
