//! Experiment configuration file (TOML). Every key has a default and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use s2daft_core::daft::FinetuneConfig;
use s2daft_core::diffusion::ScheduleConfig;
use s2daft_core::model::EncoderConfig;
use s2daft_core::optim::AdamConfig;
use s2daft_core::pretrain::PretrainConfig;

use crate::checkpoint::Precision;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub diffusion: DiffusionSection,
    pub optimizer: OptimizerSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub ablation: AblationSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source_cube: Option<PathBuf>,
    pub source_labels: Option<PathBuf>,
    pub source_names: Option<PathBuf>,
    pub target_cube: Option<PathBuf>,
    pub target_labels: Option<PathBuf>,
    pub target_names: Option<PathBuf>,
    pub c_pca: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub dim: usize,
    pub heads: usize,
    pub kernel: usize,
    pub branch_depth: usize,
    pub cross_layers: usize,
    pub fusion_depth: usize,
    pub recon_depth: usize,
    pub diff_depth: usize,
    pub ffn_mult: usize,
    pub window: usize,
    pub patch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    /// Unset: chosen from the source dataset name.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub decay: f64,
    pub masking_ratio: f64,
    pub alpha: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    /// Unset: chosen from the target dataset name.
    pub epochs: Option<usize>,
    /// Unset: chosen from the target dataset name.
    pub batch_size: Option<usize>,
    pub lr: f64,
    pub decay: f64,
    pub lambda: f64,
    pub trajectory_steps: usize,
    pub shots: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub no_s2former: bool,
    pub no_fdc: bool,
    pub no_daft: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionName {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub checkpoint_precision: PrecisionName,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            data: DataSection::default(),
            encoder: EncoderSection::default(),
            diffusion: DiffusionSection::default(),
            optimizer: OptimizerSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
            ablation: AblationSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source_cube: None,
            source_labels: None,
            source_names: None,
            target_cube: None,
            target_labels: None,
            target_names: None,
            c_pca: 30,
        }
    }
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            dim: e.dim,
            heads: e.heads,
            kernel: e.kernel,
            branch_depth: e.branch_depth,
            cross_layers: e.cross_layers,
            fusion_depth: e.fusion_depth,
            recon_depth: e.recon_depth,
            diff_depth: e.diff_depth,
            ffn_mult: e.ffn_mult,
            window: e.window,
            patch: e.patch,
        }
    }
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        Self { steps: s.steps, beta_min: s.beta_min, beta_max: s.beta_max }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self { beta1: a.beta1, beta2: a.beta2, eps: a.eps }
    }
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            epochs: None,
            batch_size: p.batch_size,
            lr: p.lr,
            decay: p.decay,
            masking_ratio: p.masking_ratio,
            alpha: p.alpha,
            tau: p.tau,
        }
    }
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        Self {
            epochs: None,
            batch_size: None,
            lr: f.lr,
            decay: f.decay,
            lambda: f.lambda,
            trajectory_steps: f.trajectory_steps,
            shots: f.shots,
        }
    }
}

/// Per-dataset schedule: `(pretrain epochs, finetune epochs, finetune batch)`.
pub fn dataset_defaults(name: &str) -> (usize, usize, usize) {
    let key: String = name.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_uppercase();
    let is = |short: &str, long: &str| key == short || key.starts_with(long);
    if is("PU", "PAVIAU") {
        (200, 200, 45)
    } else if is("PC", "PAVIAC") {
        (300, 200, 45)
    } else if is("SA", "SALINAS") {
        (300, 250, 80)
    } else if is("HU", "HOUSTON") {
        (300, 200, 75)
    } else {
        (200, 200, 45)
    }
}

/// Keys whose defaults are not taken from the published settings.
const CHOSEN: &[&str] = &[
    "data.c_pca",
    "encoder.dim",
    "encoder.heads",
    "encoder.kernel",
    "encoder.branch_depth",
    "encoder.cross_layers",
    "encoder.fusion_depth",
    "encoder.recon_depth",
    "encoder.diff_depth",
    "encoder.ffn_mult",
    "encoder.window",
    "encoder.patch",
    "diffusion.steps",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.eps",
    "finetune.lambda",
    "finetune.trajectory_steps",
    "output.checkpoint_precision",
];

fn check(ok: bool, key: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("{key}: {msg}")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.data.source_cube,
            &mut cfg.data.source_labels,
            &mut cfg.data.source_names,
            &mut cfg.data.target_cube,
            &mut cfg.data.target_labels,
            &mut cfg.data.target_names,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check(!self.seeds.is_empty(), "seeds", "at least one seed is required")?;
        check(self.data.c_pca >= 1, "data.c_pca", "must be >= 1")?;
        let e = &self.encoder;
        check(e.dim >= 2 && e.dim.is_multiple_of(2), "encoder.dim", "must be even and positive")?;
        check(e.heads >= 1 && e.dim.is_multiple_of(e.heads), "encoder.heads", "must divide encoder.dim")?;
        check(e.kernel % 2 == 1, "encoder.kernel", "must be odd")?;
        check(e.window % 2 == 1, "encoder.window", "must be odd")?;
        check(e.patch >= 1 && e.window.is_multiple_of(e.patch), "encoder.patch", "must divide encoder.window")?;
        let d = &self.diffusion;
        check(d.steps >= 1, "diffusion.steps", "must be >= 1")?;
        check(0.0 < d.beta_min && d.beta_min < d.beta_max && d.beta_max < 1.0, "diffusion.beta_min", "need 0 < beta_min < beta_max < 1")?;
        let p = &self.pretrain;
        check(p.batch_size >= 1, "pretrain.batch_size", "must be >= 1")?;
        check(p.lr > 0.0, "pretrain.lr", "must be > 0")?;
        check(p.decay > 0.0, "pretrain.decay", "must be > 0")?;
        check((0.0..1.0).contains(&p.masking_ratio), "pretrain.masking_ratio", "must be in [0, 1)")?;
        check(p.alpha >= 0.0, "pretrain.alpha", "must be >= 0")?;
        check((0.0..=1.0).contains(&p.tau), "pretrain.tau", "must be in [0, 1]")?;
        let f = &self.finetune;
        check(f.batch_size != Some(0), "finetune.batch_size", "must be >= 1")?;
        check(f.lr > 0.0, "finetune.lr", "must be > 0")?;
        check(f.decay > 0.0, "finetune.decay", "must be > 0")?;
        check(f.lambda >= 0.0, "finetune.lambda", "must be >= 0")?;
        check(f.trajectory_steps >= 1, "finetune.trajectory_steps", "must be >= 1")?;
        check(f.shots >= 1, "finetune.shots", "must be >= 1")?;
        Ok(())
    }

    /// Encoder widths for `channels` input bands, with the cross-attention
    /// ablation applied.
    pub fn encoder_config(&self) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            channels: self.data.c_pca,
            dim: e.dim,
            heads: e.heads,
            kernel: e.kernel,
            branch_depth: e.branch_depth,
            cross_layers: e.cross_layers,
            fusion_depth: e.fusion_depth,
            recon_depth: e.recon_depth,
            diff_depth: e.diff_depth,
            ffn_mult: e.ffn_mult,
            window: e.window,
            patch: e.patch,
            cross_attention: !self.ablation.no_s2former,
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig { steps: self.diffusion.steps, beta_min: self.diffusion.beta_min, beta_max: self.diffusion.beta_max }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.optimizer.beta1, beta2: self.optimizer.beta2, eps: self.optimizer.eps }
    }

    pub fn precision(&self) -> Precision {
        match self.output.checkpoint_precision {
            PrecisionName::F32 => Precision::F32,
            PrecisionName::F64 => Precision::F64,
        }
    }

    pub fn pretrain_config(&self, seed: u64, dataset: &str) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            epochs: p.epochs.unwrap_or(dataset_defaults(dataset).0),
            batch_size: p.batch_size,
            lr: p.lr,
            decay: p.decay,
            masking_ratio: p.masking_ratio,
            alpha: if self.ablation.no_fdc { 0.0 } else { p.alpha },
            tau: p.tau,
            seed,
            schedule: self.schedule(),
            adam: self.adam(),
        }
    }

    pub fn finetune_config(&self, seed: u64, dataset: &str) -> FinetuneConfig {
        let f = &self.finetune;
        let (_, epochs, batch) = dataset_defaults(dataset);
        FinetuneConfig {
            epochs: f.epochs.unwrap_or(epochs),
            batch_size: f.batch_size.unwrap_or(batch),
            lr: f.lr,
            decay: f.decay,
            lambda: if self.ablation.no_daft { 0.0 } else { f.lambda },
            trajectory_steps: f.trajectory_steps,
            shots: f.shots,
            seed,
            schedule: self.schedule(),
            adam: self.adam(),
        }
    }

    /// TOML text of the effective configuration; keys whose defaults are
    /// not from the published settings carry a `# chosen` comment.
    pub fn dump(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut section = String::new();
        let mut out = String::new();
        for line in text.lines() {
            let t = line.trim();
            if t.starts_with('[') {
                section = t.trim_matches(|c| c == '[' || c == ']').to_string();
            }
            out.push_str(line);
            if let Some((key, _)) = t.split_once(" = ") {
                let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
                if CHOSEN.contains(&full.as_str()) {
                    out.push_str(" # chosen");
                }
            }
            out.push('\n');
        }
        out
    }
}
