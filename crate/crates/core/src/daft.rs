//! Diffusion-aligned teacher/student fine-tuning.
//!
//! ```text
//! L_cls  = (1/B) Σ_i w_i · CE(h(z_S^(0)_i), y_i)     w_i ∝ 1/(1 + SNR(t_i)), mean(w) = 1
//! L_dta  = (1/|K|) Σ_{t∈K} mean_i [1 − cos(f_S^(t)_i, P(f_T^(t)_i))]
//! L_DAFT = L_cls + λ·L_dta
//! ```
//!
//! `z_S^(0)` comes from a noise-free student pass at `t = 0`. The features
//! `f^(t)` are the class-token outputs of teacher and student on identical
//! noised inputs. `K` is a fresh draw of `trajectory_steps` rounds per step,
//! each round noising every sample at its own timestep; the first round's
//! timesteps also set the classification weights.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{extract_tokens, FewShotSplit, HsiCube, Pixel};
use crate::diffusion::{time_embed_batch, DiffusionSchedule, ScheduleConfig};
use crate::error::{param_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics::{metrics, ConfusionMatrix, RunMetrics};
use crate::model::{encode, init_class_token, init_head_params, linear, EncoderConfig};
use crate::optim::{Adam, AdamConfig};
use crate::params::{Binding, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay: f64,
    /// Trajectory weight λ.
    pub lambda: f64,
    /// Timestep rounds averaged per step.
    pub trajectory_steps: usize,
    /// Labeled pixels per class.
    pub shots: usize,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 45,
            lr: 1e-3,
            decay: 0.99,
            lambda: 1.0,
            trajectory_steps: 4,
            shots: 5,
            seed: 0,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.decay > 0.0) {
            return Err(param_err!("batch size, lr and decay must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(param_err!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.shots == 0 {
            return Err(param_err!("shots must be >= 1"));
        }
        if self.trajectory_steps == 0 {
            return Err(param_err!("trajectory_steps must be >= 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * libm::pow(self.decay, epoch as f64)
    }
}

/// Frozen teacher encoder and trainable student encoder plus classifier.
///
/// Both stores use the encoder naming scheme; the student additionally
/// holds `head/{w,b}` and, when widths differ, `proj/{w,b}` mapping teacher
/// features to student width.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStudent {
    pub teacher: ParamStore,
    pub student: ParamStore,
    pub classes: usize,
}

impl TeacherStudent {
    /// Teacher from the encoder part of a pretrained store plus a fresh class
    /// token; the student starts as an exact copy with a new head.
    pub fn from_pretrained(pretrained: &ParamStore, encoder: &EncoderConfig, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(param_err!("need at least 2 classes, got {classes}"));
        }
        let mut teacher = pretrained.subtree("encoder/");
        if teacher.is_empty() {
            return Err(Error::Contract("pretrained store has no encoder parameters".into()));
        }
        if !teacher.contains("encoder/cls") {
            teacher.insert("encoder/cls", init_class_token(encoder, seed));
        }
        let mut student = teacher.clone();
        student.extend(init_head_params(encoder, classes, None, seed));
        Ok(Self { teacher, student, classes })
    }

    /// Student encoder parameters are identical to the teacher's.
    pub fn student_matches_teacher(&self) -> bool {
        self.teacher.iter().all(|(k, v)| self.student.get(k).is_ok_and(|s| s == v))
    }
}

/// Pre-normalization weights `1 / (1 + SNR(t_i))`.
pub fn snr_weights(ts: &[usize], schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    ts.iter().map(|&t| schedule.snr(t).map(|s| 1.0 / (1.0 + s))).collect()
}

/// Weights rescaled to batch mean 1. All-zero weights (every sample at an
/// infinite SNR) fall back to uniform.
pub fn normalized_snr_weights(ts: &[usize], schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    let w = snr_weights(ts, schedule)?;
    let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
    if mean > 0.0 {
        Ok(w.iter().map(|v| v / mean).collect())
    } else {
        Ok(vec![1.0; w.len()])
    }
}

/// SNR-weighted mean cross-entropy. `labels` are 0-based.
pub fn snr_enhanced_ce(g: &mut Graph, logits: Var, labels: &[usize], ts: &[usize], schedule: &DiffusionSchedule) -> Result<Var> {
    if ts.len() != labels.len() {
        return Err(param_err!("{} timesteps for {} labels", ts.len(), labels.len()));
    }
    let ce = g.cross_entropy(logits, labels)?;
    let w = normalized_snr_weights(ts, schedule)?;
    let w = g.constant(Tensor::new([w.len()], w)?);
    let weighted = g.mul(ce, w)?;
    g.mean(weighted)
}

/// Mean over rounds of `1 − mean_i cos(student_i, P(teacher_i))`. Features
/// are `[B, D]` per round; `proj` is the student store prefix of `P`, or
/// `None` for the identity. A zero-norm feature counts as cosine 0.
pub fn trajectory_loss(g: &mut Graph, student: &[Var], teacher: &[Var], proj: Option<(&mut Binding, &str)>) -> Result<Var> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(param_err!("trajectory needs equal non-empty rounds, got {} and {}", student.len(), teacher.len()));
    }
    let mut proj = proj;
    let mut total = None;
    for (&s, &t) in student.iter().zip(teacher) {
        let t = match proj.as_mut() {
            Some((p, prefix)) => linear(g, p, prefix, t)?,
            None => t,
        };
        let cos = g.cosine(s, t)?;
        let m = g.mean(cos)?;
        let term = g.neg(m)?;
        let term = g.add_scalar(term, 1.0)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    let total = total.expect("non-empty rounds");
    g.scale(total, 1.0 / student.len() as f64)
}

/// Class-token features `[B, D]` of one encoder pass over all tokens.
pub fn class_features(g: &mut Graph, p: &mut Binding, tokens: &Tensor, ts: &[usize], encoder: &EncoderConfig) -> Result<Var> {
    let b = tokens.shape()[0];
    let all: Vec<usize> = (0..tokens.shape()[1]).collect();
    let visible = vec![all; b];
    let x = g.constant(tokens.clone());
    let temb = g.constant(time_embed_batch(ts, encoder.dim)?);
    let out = encode(g, p, x, &visible, temb, encoder, true)?;
    out.cls.ok_or_else(|| Error::Contract("encoder returned no class token".into()))
}

/// Logits `[B, classes]` from a noise-free student pass.
pub fn student_logits(g: &mut Graph, p: &mut Binding, tokens: &Tensor, encoder: &EncoderConfig) -> Result<Var> {
    let b = tokens.shape()[0];
    let cls = class_features(g, p, tokens, &vec![0; b], encoder)?;
    linear(g, p, "head", cls)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaftLosses {
    pub cls: f64,
    pub dta: f64,
    pub total: f64,
}

/// Per-step randomness: timesteps and noised inputs for each round.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub ts: Vec<Vec<usize>>,
    pub noised: Vec<Tensor>,
}

impl Trajectory {
    /// Draws `rounds` per-sample timestep vectors; noise is drawn only when
    /// `with_noise` is set.
    pub fn sample(tokens: &Tensor, rounds: usize, schedule: &DiffusionSchedule, with_noise: bool, rng: &mut Rng) -> Result<Self> {
        let b = tokens.shape()[0];
        let mut ts = Vec::with_capacity(rounds);
        let mut noised = Vec::new();
        for _ in 0..rounds {
            let t = schedule.sample_timesteps(b, rng);
            if with_noise {
                noised.push(schedule.add_noise_per_sample(tokens, &t, rng)?.0);
            }
            ts.push(t);
        }
        Ok(Self { ts, noised })
    }
}

/// Context shared by every fine-tuning step.
#[derive(Debug, Clone, Copy)]
pub struct DaftContext<'a> {
    pub encoder: &'a EncoderConfig,
    pub schedule: &'a DiffusionSchedule,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct DaftForward {
    pub logits: Var,
    pub cls: Var,
    pub dta: Var,
    pub total: Var,
}

/// Records `L_DAFT` on `g`. With `λ = 0` the teacher is not run and
/// `L_dta` is the constant 0.
pub fn daft_forward(
    g: &mut Graph,
    student: &mut Binding,
    teacher: &mut Binding,
    tokens: &Tensor,
    labels: &[usize],
    trajectory: &Trajectory,
    ctx: DaftContext<'_>,
) -> Result<DaftForward> {
    let first = trajectory.ts.first().ok_or_else(|| param_err!("empty trajectory"))?;
    let logits = student_logits(g, student, tokens, ctx.encoder)?;
    let cls = snr_enhanced_ce(g, logits, labels, first, ctx.schedule)?;
    if ctx.lambda == 0.0 {
        let dta = g.constant(Tensor::scalar(0.0));
        return Ok(DaftForward { logits, cls, dta, total: cls });
    }
    if trajectory.noised.len() != trajectory.ts.len() {
        return Err(param_err!("trajectory has {} timestep rounds but {} noised inputs", trajectory.ts.len(), trajectory.noised.len()));
    }
    let mut fs = Vec::with_capacity(trajectory.ts.len());
    let mut ft = Vec::with_capacity(trajectory.ts.len());
    for (ts, x) in trajectory.ts.iter().zip(&trajectory.noised) {
        ft.push(class_features(g, teacher, x, ts, ctx.encoder)?);
        fs.push(class_features(g, student, x, ts, ctx.encoder)?);
    }
    let proj = student.store().contains("proj/w");
    let dta = if proj {
        trajectory_loss(g, &fs, &ft, Some((student, "proj")))?
    } else {
        trajectory_loss(g, &fs, &ft, None)?
    };
    let weighted = g.scale(dta, ctx.lambda)?;
    let total = g.add(cls, weighted)?;
    Ok(DaftForward { logits, cls, dta, total })
}

/// Loss and student gradients for one batch. Fails with a contract error if
/// any teacher parameter received a gradient.
pub fn finetune_step(
    pair: &TeacherStudent,
    tokens: &Tensor,
    labels: &[usize],
    trajectory: &Trajectory,
    ctx: DaftContext<'_>,
) -> Result<(DaftLosses, ParamStore)> {
    let mut g = Graph::new();
    let mut student = Binding::trainable(&pair.student);
    let mut teacher = Binding::frozen(&pair.teacher);
    let f = daft_forward(&mut g, &mut student, &mut teacher, tokens, labels, trajectory, ctx)?;
    let grads = g.backward(f.total)?;
    if let Some((name, _)) = teacher.bound().find(|(_, v)| grads.get(*v).is_some()) {
        return Err(Error::Contract(format!("teacher parameter {name} received a gradient")));
    }
    let losses = DaftLosses { cls: g.value(f.cls).item(), dta: g.value(f.dta).item(), total: g.value(f.total).item() };
    Ok((losses, student.collect_grads(&grads)))
}

/// Loss only.
pub fn finetune_loss(pair: &TeacherStudent, tokens: &Tensor, labels: &[usize], trajectory: &Trajectory, ctx: DaftContext<'_>) -> Result<DaftLosses> {
    let mut g = Graph::new();
    let mut student = Binding::frozen(&pair.student);
    let mut teacher = Binding::frozen(&pair.teacher);
    let f = daft_forward(&mut g, &mut student, &mut teacher, tokens, labels, trajectory, ctx)?;
    Ok(DaftLosses { cls: g.value(f.cls).item(), dta: g.value(f.dta).item(), total: g.value(f.total).item() })
}

/// Arg-max class (0-based) of a noise-free pass, in chunks of `chunk`.
pub fn predict(params: &ParamStore, encoder: &EncoderConfig, tokens: &Tensor, chunk: usize) -> Result<Vec<usize>> {
    let (b, n, c) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    let stride = n * c;
    let mut out = Vec::with_capacity(b);
    for start in (0..b).step_by(chunk.max(1)) {
        let len = chunk.max(1).min(b - start);
        let part = Tensor::new([len, n, c], tokens.data()[start * stride..(start + len) * stride].to_vec())?;
        let mut g = Graph::new();
        let mut p = Binding::frozen(params);
        let logits = student_logits(&mut g, &mut p, &part, encoder)?;
        let v = g.value(logits);
        let k = v.shape()[1];
        for row in v.data().chunks(k) {
            let best = row.iter().enumerate().fold(0, |best, (i, x)| if *x > row[best] { i } else { best });
            out.push(best);
        }
    }
    Ok(out)
}

/// Predicts the given pixels of `cube`.
pub fn predict_pixels(params: &ParamStore, encoder: &EncoderConfig, cube: &HsiCube, pixels: &[Pixel], chunk: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(pixels.len());
    for part in pixels.chunks(chunk.max(1)) {
        let tokens = extract_tokens(cube, part, encoder.window, encoder.patch)?;
        out.extend(predict(params, encoder, &tokens, part.len())?);
    }
    Ok(out)
}

/// Scores on `samples` (pixel, 0-based class).
pub fn evaluate(params: &ParamStore, encoder: &EncoderConfig, cube: &HsiCube, samples: &[(Pixel, usize)], classes: usize) -> Result<RunMetrics> {
    let pixels: Vec<Pixel> = samples.iter().map(|s| s.0).collect();
    let truth: Vec<usize> = samples.iter().map(|s| s.1).collect();
    let pred = predict_pixels(params, encoder, cube, &pixels, 256)?;
    metrics(&ConfusionMatrix::from_predictions(classes, &truth, &pred)?)
}

/// One line of the fine-tuning log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneLog {
    pub epoch: usize,
    pub step: usize,
    pub t_mean: f64,
    pub losses: DaftLosses,
    pub lambda: f64,
    pub lr: f64,
}

/// Resumable fine-tuning state over the few-shot training pixels.
#[derive(Debug, Clone)]
pub struct Finetuner {
    pub pair: TeacherStudent,
    pub optimizer: Adam,
    pub epoch: usize,
    pub config: FinetuneConfig,
    pub encoder: EncoderConfig,
    schedule: DiffusionSchedule,
    tokens: Tensor,
    labels: Vec<usize>,
}

impl Finetuner {
    pub fn new(pair: TeacherStudent, encoder: EncoderConfig, config: FinetuneConfig, cube: &HsiCube, split: &FewShotSplit) -> Result<Self> {
        config.validate()?;
        encoder.validate()?;
        if cube.bands() != encoder.channels {
            return Err(param_err!("cube has {} bands, encoder expects {}", cube.bands(), encoder.channels));
        }
        let train = split.train_samples();
        let pixels: Vec<Pixel> = train.iter().map(|s| s.0).collect();
        let labels: Vec<usize> = train.iter().map(|s| s.1).collect();
        let tokens = extract_tokens(cube, &pixels, encoder.window, encoder.patch)?;
        let schedule = config.schedule.build()?;
        let optimizer = Adam::new(config.adam);
        Ok(Self { pair, optimizer, epoch: 0, config, encoder, schedule, tokens, labels })
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.epoch)
    }

    pub fn context(&self) -> DaftContext<'_> {
        DaftContext { encoder: &self.encoder, schedule: &self.schedule, lambda: self.config.lambda }
    }

    fn select(&self, rows: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let s = self.tokens.shape();
        let stride = s[1] * s[2];
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            data.extend_from_slice(&self.tokens.data()[r * stride..(r + 1) * stride]);
        }
        Ok((Tensor::new([rows.len(), s[1], s[2]], data)?, rows.iter().map(|&r| self.labels[r]).collect()))
    }

    /// One pass over the training pixels in shuffled mini-batches.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&FinetuneLog)) -> Result<Vec<DaftLosses>> {
        let mut rng = rng::stream(self.config.seed, &[0x6461_6674, self.epoch as u64]);
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.shuffle(&mut rng);
        let lr = self.lr();
        let with_noise = self.config.lambda > 0.0;
        let mut out = Vec::new();
        for (step, rows) in order.chunks(self.config.batch_size).enumerate() {
            let (tokens, labels) = self.select(rows)?;
            let traj = Trajectory::sample(&tokens, self.config.trajectory_steps, &self.schedule, with_noise, &mut rng)?;
            let (losses, grads) = finetune_step(&self.pair, &tokens, &labels, &traj, self.context())?;
            self.optimizer.update(&mut self.pair.student, &grads, lr)?;
            let t_mean = traj.ts[0].iter().sum::<usize>() as f64 / rows.len() as f64;
            on_step(&FinetuneLog { epoch: self.epoch, step, t_mean, losses, lambda: self.config.lambda, lr });
            out.push(losses);
        }
        self.epoch += 1;
        Ok(out)
    }
}
