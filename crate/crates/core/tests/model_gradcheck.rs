//! Finite-difference checks of the full pretraining and fine-tuning losses
//! on a toy model.

mod common;

use common::{check_params, randn};
use s2daft_core::daft::{daft_forward, DaftContext, TeacherStudent, Trajectory};
use s2daft_core::data::{sample_mask, TokenBatch};
use s2daft_core::diffusion::DiffusionSchedule;
use s2daft_core::model::{init_pretrain_params, EncoderConfig};
use s2daft_core::params::{Binding, ParamStore};
use s2daft_core::pretrain::{pretrain_forward, BandMask, PretrainContext};
use s2daft_core::rng;
use s2daft_core::{Graph, Tensor};

const TOL: f64 = 1e-4;

fn toy_config() -> EncoderConfig {
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

/// Initial parameters moved off their structured starting point so no
/// gradient vanishes by symmetry.
fn jitter(store: &ParamStore, seed: u64) -> ParamStore {
    let mut out = store.clone();
    for (i, (_, v)) in out.iter_mut().enumerate() {
        let noise = randn(v.shape(), seed + i as u64);
        for (x, n) in v.data_mut().iter_mut().zip(noise.data()) {
            *x += 0.2 * n;
        }
    }
    out
}

fn toy_batch(cfg: &EncoderConfig) -> TokenBatch {
    let n = cfg.n_tokens();
    let tokens = randn(&[2, n, cfg.channels], 11);
    let (visible_idx, masked_idx) = sample_mask(2, n, 0.75, &mut rng::seeded(5)).unwrap();
    assert_eq!(visible_idx[0].len(), 2);
    TokenBatch { tokens, window: cfg.window, patch: cfg.patch, origins: vec![(0, 0); 2], visible_idx, masked_idx }
}

fn report(errors: &[(String, f64)]) {
    let bad: Vec<_> = errors.iter().filter(|(_, e)| *e >= TOL).collect();
    assert!(bad.is_empty(), "parameters over tolerance: {bad:?}");
}

#[test]
fn pretrain_loss_gradients() {
    let cfg = toy_config();
    let params = jitter(&init_pretrain_params(&cfg, 3).unwrap(), 200);
    let batch = toy_batch(&cfg);
    let schedule = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
    let band = BandMask::new(cfg.channels, 0.3).unwrap();
    let ts = [7usize, 61];
    let (noised, _) = schedule.add_noise_per_sample(&batch.tokens, &ts, &mut rng::seeded(9)).unwrap();
    let errors = check_params(&params, 6, |g, p| {
        let ctx = PretrainContext { encoder: &cfg, schedule: &schedule, band: &band, alpha: 0.5 };
        Ok(pretrain_forward(g, p, &batch, &noised, &ts, ctx)?.total)
    });
    assert_eq!(errors.len(), params.len());
    report(&errors);
}

#[test]
fn pretrain_loss_gradients_without_cross_attention() {
    let cfg = EncoderConfig { cross_attention: false, ..toy_config() };
    let params = jitter(&init_pretrain_params(&cfg, 4).unwrap(), 300);
    let batch = toy_batch(&cfg);
    let schedule = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
    let band = BandMask::new(cfg.channels, 0.3).unwrap();
    let ts = [1usize, 100];
    let (noised, _) = schedule.add_noise_per_sample(&batch.tokens, &ts, &mut rng::seeded(1)).unwrap();
    let errors = check_params(&params, 4, |g, p| {
        let ctx = PretrainContext { encoder: &cfg, schedule: &schedule, band: &band, alpha: 0.5 };
        Ok(pretrain_forward(g, p, &batch, &noised, &ts, ctx)?.total)
    });
    report(&errors);
}

fn gradient_names(params: &ParamStore, pick: impl Fn(&s2daft_core::pretrain::PretrainForward) -> s2daft_core::Var) -> Vec<(String, f64)> {
    let cfg = toy_config();
    let batch = toy_batch(&cfg);
    let schedule = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
    let band = BandMask::new(cfg.channels, 0.3).unwrap();
    let ts = [20usize, 40];
    let (noised, _) = schedule.add_noise_per_sample(&batch.tokens, &ts, &mut rng::seeded(2)).unwrap();
    let mut g = Graph::new();
    let mut p = Binding::trainable(params);
    let ctx = PretrainContext { encoder: &cfg, schedule: &schedule, band: &band, alpha: 0.5 };
    let f = pretrain_forward(&mut g, &mut p, &batch, &noised, &ts, ctx).unwrap();
    let grads = g.backward(pick(&f)).unwrap();
    let store = p.collect_grads(&grads);
    store.iter().map(|(k, v)| (k.clone(), v.data().iter().map(|x| x.abs()).fold(0.0, f64::max))).collect()
}

#[test]
fn denoising_loss_leaves_reconstruction_decoder_untouched() {
    let params = jitter(&init_pretrain_params(&toy_config(), 3).unwrap(), 400);
    for (name, mag) in gradient_names(&params, |f| f.dfs) {
        if name.starts_with("recon/") {
            assert_eq!(mag, 0.0, "{name}");
        }
        if name.starts_with("diff/") {
            assert!(mag > 0.0, "{name}");
        }
    }
    for (name, mag) in gradient_names(&params, |f| f.spa) {
        if name.starts_with("diff/") {
            assert_eq!(mag, 0.0, "{name}");
        }
    }
}

fn toy_pair(cfg: &EncoderConfig) -> TeacherStudent {
    let pretrained = jitter(&init_pretrain_params(cfg, 8).unwrap(), 500);
    let mut pair = TeacherStudent::from_pretrained(&pretrained, cfg, 3, 8).unwrap();
    pair.student = jitter(&pair.student, 600);
    pair
}

#[test]
fn daft_loss_gradients() {
    let cfg = toy_config();
    let pair = toy_pair(&cfg);
    let schedule = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
    let tokens = randn(&[3, cfg.n_tokens(), cfg.channels], 21);
    let labels = [0usize, 2, 1];
    let traj = Trajectory::sample(&tokens, 2, &schedule, true, &mut rng::seeded(4)).unwrap();
    let errors = check_params(&pair.student, 6, |g, p| {
        let mut teacher = Binding::frozen(&pair.teacher);
        let ctx = DaftContext { encoder: &cfg, schedule: &schedule, lambda: 1.0 };
        Ok(daft_forward(g, p, &mut teacher, &tokens, &labels, &traj, ctx)?.total)
    });
    assert!(errors.iter().any(|(n, _)| n == "head/w"));
    report(&errors);
}

#[test]
fn daft_loss_gradients_with_projection() {
    let cfg = toy_config();
    let mut pair = toy_pair(&cfg);
    pair.student.insert("proj/w", randn(&[8, 8], 30));
    pair.student.insert("proj/b", Tensor::zeros([8]));
    let schedule = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
    let tokens = randn(&[2, cfg.n_tokens(), cfg.channels], 22);
    let traj = Trajectory::sample(&tokens, 3, &schedule, true, &mut rng::seeded(5)).unwrap();
    let errors = check_params(&pair.student, 4, |g, p| {
        let mut teacher = Binding::frozen(&pair.teacher);
        let ctx = DaftContext { encoder: &cfg, schedule: &schedule, lambda: 0.7 };
        Ok(daft_forward(g, p, &mut teacher, &tokens, &[1, 0], &traj, ctx)?.total)
    });
    report(&errors);
}
