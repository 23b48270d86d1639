use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::HsiCube;
use crate::error::{param_err, Result};
use crate::rng;

/// Two-domain synthetic scene generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// 0 gives identical signatures in both domains.
    pub domain_shift: f64,
    pub noise_std: f64,
    /// Side of the square label blocks.
    pub block: usize,
    /// Pixels within this distance of a block edge are left unlabeled.
    pub label_margin: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            height: 32,
            width: 32,
            bands: 32,
            domain_shift: 0.2,
            noise_std: 0.02,
            block: 8,
            label_margin: 2,
            seed: 0,
        }
    }
}

struct Signature {
    bumps: Vec<(f64, f64, f64)>,
    base: f64,
}

impl Signature {
    fn eval(&self, x: f64) -> f64 {
        self.base
            + self
                .bumps
                .iter()
                .map(|&(amp, mu, sigma)| amp * libm::exp(-(x - mu) * (x - mu) / (2.0 * sigma * sigma)))
                .sum::<f64>()
    }
}

/// Per-band signature of `class` in a domain with the given shift.
/// Wavelength positions are normalized to `[0, 1]`; the target domain
/// warps them and applies a gain and offset.
fn signatures(config: &SynthConfig) -> Vec<Signature> {
    (0..config.num_classes)
        .map(|k| {
            let mut rng = rng::stream(config.seed, &[0x7369_67, k as u64]);
            let bumps = (0..3)
                .map(|_| (rng.random_range(0.2..0.8), rng.random_range(0.05..0.95), rng.random_range(0.04..0.15)))
                .collect();
            Signature { bumps, base: rng.random_range(0.1..0.3) }
        })
        .collect()
}

fn domain_spectrum(sig: &Signature, bands: usize, shift: f64) -> Vec<f64> {
    let gain = 1.0 - 0.5 * shift;
    let offset = 0.2 * shift;
    (0..bands)
        .map(|b| {
            let x = if bands == 1 { 0.0 } else { b as f64 / (bands - 1) as f64 };
            let warped = x + 0.15 * shift * libm::sin(core::f64::consts::PI * x);
            gain * sig.eval(warped) + offset
        })
        .collect()
}

fn layout(config: &SynthConfig, stream: u64) -> Vec<u16> {
    let (h, w, b) = (config.height, config.width, config.block.max(1));
    let (by, bx) = (h.div_ceil(b), w.div_ceil(b));
    let mut classes: Vec<u16> = (0..by * bx).map(|i| (i % config.num_classes) as u16 + 1).collect();
    classes.shuffle(&mut rng::stream(config.seed, &[0x6c61_79, stream]));
    let mut labels = alloc::vec![0u16; h * w];
    for r in 0..h {
        for c in 0..w {
            let (ir, ic) = (r % b, c % b);
            let m = config.label_margin;
            let interior = ir >= m && ir + m < b && ic >= m && ic + m < b;
            labels[r * w + c] = if interior || m == 0 { classes[(r / b) * bx + c / b] } else { 0 };
        }
    }
    labels
}

/// Block-tiled class layout of the pixel's block, labeled or not.
fn block_classes(config: &SynthConfig, stream: u64) -> Vec<u16> {
    let margin_free = SynthConfig { label_margin: 0, ..config.clone() };
    layout(&margin_free, stream)
}

fn render(config: &SynthConfig, shift: f64, stream: u64) -> Result<HsiCube> {
    let sigs = signatures(config);
    let spectra: Vec<Vec<f64>> = sigs.iter().map(|s| domain_spectrum(s, config.bands, shift)).collect();
    let classes = block_classes(config, stream);
    let labels = layout(config, stream);
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| param_err!("noise std: {e}"))?;
    let mut rng = rng::stream(config.seed, &[0x6e6f_6973, stream]);
    let mut data = Vec::with_capacity(config.height * config.width * config.bands);
    for &k in &classes {
        for &v in &spectra[k as usize - 1] {
            let eps = if config.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            data.push(v + eps);
        }
    }
    let name = if stream == 0 { "synthetic-source" } else { "synthetic-target" };
    let mut cube = HsiCube::new(name, config.height, config.width, config.bands, data, Some(labels))?;
    cube.class_names = (1..=config.num_classes).map(|k| alloc::format!("class{k}")).collect();
    Ok(cube)
}

/// A source scene and a shifted target scene sharing class signatures.
pub fn make_synthetic_domains(config: &SynthConfig) -> Result<(HsiCube, HsiCube)> {
    if config.num_classes < 2 {
        return Err(param_err!("need at least 2 classes, got {}", config.num_classes));
    }
    if config.domain_shift < 0.0 || config.noise_std < 0.0 {
        return Err(param_err!("shift and noise must be non-negative"));
    }
    Ok((render(config, 0.0, 0)?, render(config, config.domain_shift, 1)?))
}
