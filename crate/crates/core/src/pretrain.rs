//! Self-supervised pretraining: masked reconstruction with a
//! frequency-domain constraint plus diffusion denoising of the visible
//! tokens.
//!
//! ```text
//! L_spa     = (1/|M|) Σ_n ‖x̂_n − x_n‖₁                  over masked tokens
//! L_freq    = (1/|M|) Σ_n ‖m ⊙ (|F x_n| − |F x̂_n|)‖₁     F = rFFT over channels
//! L_dfs     = mean((x̂_vis − x_vis)²)
//! L_pretrain = L_spa + α·L_freq + L_dfs
//! ```
//!
//! The visible and masked tokens are both noised to a per-sample timestep
//! before the encoder; both targets are the clean tokens.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{sample_mask, TokenBatch};
use crate::diffusion::{time_embed_batch, DiffusionSchedule, ScheduleConfig};
use crate::error::{param_err, Result};
use crate::fft::num_bins;
use crate::graph::{Graph, Var};
use crate::model::{decode_masked, diff_decode, encode, EncoderConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Binding, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// High-frequency selector over `C' = ⌊C/2⌋ + 1` bins: `m_i = 1` iff
/// `i > τ·C'`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMask {
    pub tau: f64,
    mask: Vec<f64>,
}

impl BandMask {
    pub fn new(channels: usize, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(param_err!("tau must be in [0, 1], got {tau}"));
        }
        let bins = num_bins(channels);
        let cut = tau * bins as f64;
        let mask = (0..bins).map(|i| if i as f64 > cut { 1.0 } else { 0.0 }).collect();
        Ok(Self { tau, mask })
    }

    pub fn bins(&self) -> usize {
        self.mask.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub decay: f64,
    pub masking_ratio: f64,
    /// Weight of the frequency term.
    pub alpha: f64,
    pub tau: f64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 512,
            lr: 1e-3,
            decay: 0.99,
            masking_ratio: 0.75,
            alpha: 0.5,
            tau: 0.3,
            seed: 0,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.decay > 0.0) {
            return Err(param_err!("batch size, lr and decay must be positive"));
        }
        if !(0.0..1.0).contains(&self.masking_ratio) {
            return Err(param_err!("masking ratio must be in [0, 1), got {}", self.masking_ratio));
        }
        if !(self.alpha >= 0.0) {
            return Err(param_err!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(param_err!("tau must be in [0, 1], got {}", self.tau));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * libm::pow(self.decay, epoch as f64)
    }
}

fn masked_token_count(g: &Graph, x: Var) -> usize {
    let s = g.shape(x);
    s[0] * s[1]
}

/// Mean per-token L1 distance over masked tokens `[B, M, C]`. Returns the
/// loss and whether the masked set was empty (loss 0).
pub fn loss_spa(g: &mut Graph, pred: Var, target: Var) -> Result<(Var, bool)> {
    let count = masked_token_count(g, pred);
    if count == 0 {
        return Ok((g.constant(Tensor::scalar(0.0)), true));
    }
    let diff = g.sub(pred, target)?;
    let per_token = g.l1_norm(diff)?;
    let s = g.sum(per_token)?;
    Ok((g.scale(s, 1.0 / count as f64)?, false))
}

/// Mean per-token L1 distance between masked high-band rFFT magnitudes.
pub fn loss_freq(g: &mut Graph, pred: Var, target: Var, band: &BandMask) -> Result<Var> {
    let count = masked_token_count(g, pred);
    if count == 0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let c = g.shape(pred)[2];
    if band.bins() != num_bins(c) {
        return Err(param_err!("band mask has {} bins, spectrum has {}", band.bins(), num_bins(c)));
    }
    let mt = g.rfft_magnitude(target)?;
    let mp = g.rfft_magnitude(pred)?;
    let diff = g.sub(mt, mp)?;
    let m = g.constant(Tensor::new([band.bins()], band.values().to_vec())?);
    let selected = g.mul(diff, m)?;
    let per_token = g.l1_norm(selected)?;
    let s = g.sum(per_token)?;
    g.scale(s, 1.0 / count as f64)
}

/// Mean squared error over all elements.
pub fn loss_dfs(g: &mut Graph, clean: Var, denoised: Var) -> Result<Var> {
    let d = g.sub(denoised, clean)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainLosses {
    pub spa: f64,
    pub freq: f64,
    pub dfs: f64,
    pub total: f64,
}

/// Tape handles of one pretraining forward pass.
#[derive(Debug, Clone)]
pub struct PretrainForward {
    pub noised: Var,
    pub pred_masked: Var,
    pub pred_visible: Var,
    pub spa: Var,
    pub freq: Var,
    pub dfs: Var,
    pub total: Var,
    pub masked_empty: bool,
}

/// Everything a pretraining step needs besides parameters.
#[derive(Debug, Clone, Copy)]
pub struct PretrainContext<'a> {
    pub encoder: &'a EncoderConfig,
    pub schedule: &'a DiffusionSchedule,
    pub band: &'a BandMask,
    pub alpha: f64,
}

/// Records the full pretraining loss on `g`. `noised` are the tokens after
/// the forward diffusion; `batch.tokens` are the clean targets.
pub fn pretrain_forward(
    g: &mut Graph,
    p: &mut Binding,
    batch: &TokenBatch,
    noised: &Tensor,
    ts: &[usize],
    ctx: PretrainContext<'_>,
) -> Result<PretrainForward> {
    let clean = g.constant(batch.tokens.clone());
    let noised = g.constant(noised.clone());
    let temb = g.constant(time_embed_batch(ts, ctx.encoder.dim)?);
    let enc = encode(g, p, noised, &batch.visible_idx, temb, ctx.encoder, false)?;

    let pred_masked = decode_masked(g, p, enc.z_fuse, &batch.visible_idx, &batch.masked_idx, temb, ctx.encoder)?;
    let target_masked = g.gather_rows(clean, &batch.masked_idx)?;
    let (spa, masked_empty) = loss_spa(g, pred_masked, target_masked)?;
    let freq = if ctx.alpha > 0.0 {
        loss_freq(g, pred_masked, target_masked, ctx.band)?
    } else {
        g.constant(Tensor::scalar(0.0))
    };

    let pred_visible = diff_decode(g, p, enc.z_fuse, &enc.skips, temb, ctx.encoder)?;
    let target_visible = g.gather_rows(clean, &batch.visible_idx)?;
    let dfs = loss_dfs(g, target_visible, pred_visible)?;

    let weighted = g.scale(freq, ctx.alpha)?;
    let recon = g.add(spa, weighted)?;
    let total = g.add(recon, dfs)?;
    Ok(PretrainForward { noised, pred_masked, pred_visible, spa, freq, dfs, total, masked_empty })
}

fn losses_of(g: &Graph, f: &PretrainForward) -> PretrainLosses {
    PretrainLosses {
        spa: g.value(f.spa).item(),
        freq: g.value(f.freq).item(),
        dfs: g.value(f.dfs).item(),
        total: g.value(f.total).item(),
    }
}

/// Loss and parameter gradients for one batch. Noise is drawn from `rng`.
pub fn pretrain_step(
    params: &ParamStore,
    batch: &TokenBatch,
    ts: &[usize],
    rng: &mut Rng,
    ctx: PretrainContext<'_>,
) -> Result<(PretrainLosses, ParamStore)> {
    let (noised, _) = ctx.schedule.add_noise_per_sample(&batch.tokens, ts, rng)?;
    let mut g = Graph::new();
    let mut p = Binding::trainable(params);
    let f = pretrain_forward(&mut g, &mut p, batch, &noised, ts, ctx)?;
    let grads = g.backward(f.total)?;
    Ok((losses_of(&g, &f), p.collect_grads(&grads)))
}

/// Loss only, no gradients.
pub fn pretrain_loss(params: &ParamStore, batch: &TokenBatch, ts: &[usize], rng: &mut Rng, ctx: PretrainContext<'_>) -> Result<PretrainLosses> {
    let (noised, _) = ctx.schedule.add_noise_per_sample(&batch.tokens, ts, rng)?;
    let mut g = Graph::new();
    let mut p = Binding::frozen(params);
    let f = pretrain_forward(&mut g, &mut p, batch, &noised, ts, ctx)?;
    Ok(losses_of(&g, &f))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    /// Mean sampled timestep over the batch.
    pub t_mean: f64,
    pub losses: PretrainLosses,
    pub lr: f64,
}

/// Resumable pretraining state. Randomness for epoch `e` comes from a
/// stream derived from `(seed, e)`, so continuing from a saved epoch
/// reproduces an uninterrupted run.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    pub params: ParamStore,
    pub optimizer: Adam,
    /// Number of completed epochs.
    pub epoch: usize,
    pub config: PretrainConfig,
    pub encoder: EncoderConfig,
    schedule: DiffusionSchedule,
    band: BandMask,
    /// Clean tokens of every training pixel.
    tokens: TokenBatch,
}

impl Pretrainer {
    pub fn new(params: ParamStore, encoder: EncoderConfig, config: PretrainConfig, tokens: TokenBatch) -> Result<Self> {
        config.validate()?;
        encoder.validate()?;
        if tokens.channels() != encoder.channels || tokens.n_tokens() != encoder.n_tokens() {
            return Err(param_err!(
                "tokens [{}, {}] do not match encoder channels {} / tokens {}",
                tokens.n_tokens(),
                tokens.channels(),
                encoder.channels,
                encoder.n_tokens()
            ));
        }
        let schedule = config.schedule.build()?;
        let band = BandMask::new(encoder.channels, config.tau)?;
        let optimizer = Adam::new(config.adam);
        Ok(Self { params, optimizer, epoch: 0, config, encoder, schedule, band, tokens })
    }

    pub fn context(&self) -> PretrainContext<'_> {
        PretrainContext { encoder: &self.encoder, schedule: &self.schedule, band: &self.band, alpha: self.config.alpha }
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn tokens(&self) -> &TokenBatch {
        &self.tokens
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.epoch)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.tokens.batch().div_ceil(self.config.batch_size)
    }

    /// Runs one optimizer step on the given rows with the given rng.
    pub fn step_on(&mut self, rows: &[usize], rng: &mut Rng) -> Result<(PretrainLosses, f64)> {
        let mut batch = self.tokens.select(rows)?;
        let (vis, masked) = sample_mask(rows.len(), batch.n_tokens(), self.config.masking_ratio, rng)?;
        batch.visible_idx = vis;
        batch.masked_idx = masked;
        let ts = self.schedule.sample_timesteps(rows.len(), rng);
        let (losses, grads) = pretrain_step(&self.params, &batch, &ts, rng, self.context())?;
        let lr = self.lr();
        self.optimizer.update(&mut self.params, &grads, lr)?;
        let t_mean = ts.iter().sum::<usize>() as f64 / ts.len().max(1) as f64;
        Ok((losses, t_mean))
    }

    /// One pass over all tokens in shuffled mini-batches.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&StepLog)) -> Result<Vec<PretrainLosses>> {
        let mut rng = rng::stream(self.config.seed, &[0x7072_6574, self.epoch as u64]);
        let mut order: Vec<usize> = (0..self.tokens.batch()).collect();
        order.shuffle(&mut rng);
        let lr = self.lr();
        let mut out = Vec::new();
        for (step, rows) in order.chunks(self.config.batch_size).enumerate() {
            let (losses, t_mean) = self.step_on(rows, &mut rng)?;
            on_step(&StepLog { epoch: self.epoch, step, t_mean, losses, lr });
            out.push(losses);
        }
        self.epoch += 1;
        Ok(out)
    }
}
