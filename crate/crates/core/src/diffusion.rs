//! Forward diffusion: linear β schedule, cumulative retention ᾱ_t, SNR,
//! noising, and sinusoidal timestep encodings.
//!
//! Timesteps are 1-based: `t ∈ 1..=steps`. The encoding also accepts
//! `t = 0`, used for noise-free passes.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{param_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Parameters of a linear β schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 1000, beta_min: 1e-4, beta_max: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    snr: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linear interpolation of β from `beta_min` to `beta_max` over `steps`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(param_err!("diffusion steps must be >= 1"));
        }
        if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
            return Err(param_err!("need 0 < beta_min < beta_max < 1, got [{beta_min}, {beta_max}]"));
        }
        let beta = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    /// Builds the tables from explicit β values in `[0, 1)`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(param_err!("empty beta table"));
        }
        if let Some(b) = beta.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(param_err!("beta {b} outside [0, 1)"));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let snr = alpha_bar
            .iter()
            .map(|a| if *a >= 1.0 { f64::INFINITY } else { a / (1.0 - a) })
            .collect();
        Ok(Self { beta, alpha_bar, snr })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(param_err!("timestep {t} outside 1..={}", self.steps()));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    /// `ᾱ_t / (1 − ᾱ_t)`.
    pub fn snr(&self, t: usize) -> Result<f64> {
        Ok(self.snr[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn snrs(&self) -> &[f64] {
        &self.snr
    }

    /// `x_t = √ᾱ_t · x + √(1 − ᾱ_t) · ε`, returning `(x_t, ε)`.
    pub fn add_noise(&self, x: &Tensor, t: usize, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
        let a = self.alpha_bar(t)?;
        let eps = Tensor::from_fn(x.shape().to_vec(), |_| StandardNormal.sample(rng));
        let (sa, sn) = (libm::sqrt(a), libm::sqrt(1.0 - a));
        let data = x.data().iter().zip(eps.data()).map(|(x, e)| sa * x + sn * e).collect();
        Ok((Tensor::new(x.shape().to_vec(), data)?, eps))
    }

    /// Noises each leading-axis sample at its own timestep.
    pub fn add_noise_per_sample(&self, x: &Tensor, ts: &[usize], rng: &mut Rng) -> Result<(Tensor, Tensor)> {
        let b = x.shape().first().copied().unwrap_or(0);
        if b != ts.len() {
            return Err(param_err!("{} timesteps for batch of {b}", ts.len()));
        }
        let per = if b == 0 { 0 } else { x.len() / b };
        let eps = Tensor::from_fn(x.shape().to_vec(), |_| StandardNormal.sample(rng));
        let mut data = Vec::with_capacity(x.len());
        for (i, &t) in ts.iter().enumerate() {
            let a = self.alpha_bar(t)?;
            let (sa, sn) = (libm::sqrt(a), libm::sqrt(1.0 - a));
            let range = i * per..(i + 1) * per;
            data.extend(x.data()[range.clone()].iter().zip(&eps.data()[range]).map(|(x, e)| sa * x + sn * e));
        }
        Ok((Tensor::new(x.shape().to_vec(), data)?, eps))
    }

    /// One uniform timestep in `1..=steps` per sample.
    pub fn sample_timesteps(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(1..=self.steps())).collect()
    }
}

/// Sinusoidal encoding: entry `2j` is `sin(t / 10000^{2j/D})`, entry
/// `2j + 1` the matching cosine. Shape `[1, D]`.
pub fn time_embed(t: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(param_err!("time embedding dim must be even and positive, got {dim}"));
    }
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim / 2 {
        let freq = libm::pow(10000.0, (2 * j) as f64 / dim as f64);
        let arg = t as f64 / freq;
        out.push(libm::sin(arg));
        out.push(libm::cos(arg));
    }
    Tensor::new([1, dim], out)
}

/// Stacked encodings for a batch of timesteps, shape `[B, 1, D]`.
pub fn time_embed_batch(ts: &[usize], dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend_from_slice(time_embed(t, dim)?.data());
    }
    Tensor::new([ts.len(), 1, dim], data)
}
