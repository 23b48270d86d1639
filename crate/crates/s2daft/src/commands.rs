//! The four experiment subcommands.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use s2daft_core::daft::{evaluate, predict_pixels};
use s2daft_core::data::{make_synthetic_domains, HsiCube, Pixel, SynthConfig};
use s2daft_core::metrics::{aggregate_runs, EvalReport, RunMetrics};
use s2daft_core::model::{init_pretrain_params, EncoderConfig};
use s2daft_core::pipeline::{finetune_target, pretrain_batch, reduce};
use s2daft_core::pretrain::{PretrainLosses, Pretrainer};
use s2daft_core::ParamStore;

use crate::checkpoint::{self, check_layout, Checkpoint};
use crate::config::ExperimentConfig;
use crate::container::{load_cube, save_class_names, save_cube, save_labels, write};
use crate::error::{CliError, Result};
use crate::report::{
    finetune_log_line, format_report, pretrain_log_line, save_map, FINETUNE_LOG_HEADER, PRETRAIN_LOG_HEADER,
};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

struct Log {
    path: PathBuf,
    file: fs::File,
    failed: Option<std::io::Error>,
}

impl Log {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let mut file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        writeln!(file, "{header}").map_err(|e| CliError::io(&path, e))?;
        Ok(Self { path, file, failed: None })
    }

    fn line(&mut self, text: &str) {
        if self.failed.is_none() {
            if let Err(e) = writeln!(self.file, "{text}") {
                self.failed = Some(e);
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.failed {
            Some(e) => Err(CliError::io(&self.path, e)),
            None => Ok(()),
        }
    }
}

/// Paths written by [`synth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFiles {
    pub source_cube: PathBuf,
    pub source_labels: PathBuf,
    pub target_cube: PathBuf,
    pub target_labels: PathBuf,
    pub config: PathBuf,
}

/// Writes both synthetic domains plus a config that points at them.
pub fn synth(config: &SynthConfig, out: &Path) -> Result<SynthFiles> {
    create_dir(out)?;
    let (source, target) = make_synthetic_domains(config)?;
    let files = SynthFiles {
        source_cube: out.join("source.hsic"),
        source_labels: out.join("source.hsil"),
        target_cube: out.join("target.hsic"),
        target_labels: out.join("target.hsil"),
        config: out.join("config.toml"),
    };
    save_cube(&source, &files.source_cube)?;
    save_labels(&source, &files.source_labels)?;
    save_class_names(&source.class_names, &out.join("source.names"))?;
    save_cube(&target, &files.target_cube)?;
    save_labels(&target, &files.target_labels)?;
    save_class_names(&target.class_names, &out.join("target.names"))?;

    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![config.seed];
    cfg.data.source_cube = Some("source.hsic".into());
    cfg.data.source_labels = Some("source.hsil".into());
    cfg.data.source_names = Some("source.names".into());
    cfg.data.target_cube = Some("target.hsic".into());
    cfg.data.target_labels = Some("target.hsil".into());
    cfg.data.target_names = Some("target.names".into());
    write(&files.config, cfg.dump().as_bytes())?;
    Ok(files)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("{key} is not set")))
}

pub fn load_source(cfg: &ExperimentConfig) -> Result<HsiCube> {
    let d = &cfg.data;
    load_cube(required(&d.source_cube, "data.source_cube")?, d.source_labels.as_deref(), d.source_names.as_deref())
}

pub fn load_target(cfg: &ExperimentConfig) -> Result<HsiCube> {
    let d = &cfg.data;
    load_cube(
        required(&d.target_cube, "data.target_cube")?,
        Some(required(&d.target_labels, "data.target_labels")?),
        d.target_names.as_deref(),
    )
}

fn check_bands(cube: &HsiCube, c_pca: usize) -> Result<()> {
    if c_pca > cube.bands() {
        return Err(CliError::Config(format!("data.c_pca = {c_pca} exceeds the {} bands of {}", cube.bands(), cube.name)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub epochs: usize,
    pub last: Option<PretrainLosses>,
}

/// Pretrains on the source cube, rewriting the checkpoint after every
/// epoch. With `resume`, continues from the saved parameters, optimizer
/// state and epoch counter.
pub fn pretrain(cfg: &ExperimentConfig, seed: u64, out: &Path, resume: Option<&Path>) -> Result<PretrainOutcome> {
    create_dir(out)?;
    write(&out.join("config.toml"), cfg.dump().as_bytes())?;
    let cube = load_source(cfg)?;
    check_bands(&cube, cfg.data.c_pca)?;
    let (_, reduced) = reduce(&cube, cfg.data.c_pca)?;
    let encoder = cfg.encoder_config();
    let pcfg = cfg.pretrain_config(seed, &cube.name);
    let batch = pretrain_batch(&reduced, &encoder, pcfg.masking_ratio, seed)?;
    let mut trainer = Pretrainer::new(init_pretrain_params(&encoder, seed)?, encoder.clone(), pcfg.clone(), batch)?;
    if let Some(path) = resume {
        let ckpt = checkpoint::load(path)?;
        if ckpt.encoder != encoder {
            return Err(CliError::Config(format!("{}: encoder {:?} differs from configured {:?}", path.display(), ckpt.encoder, encoder)));
        }
        check_layout(&ckpt.params, &trainer.params, &path.display().to_string())?;
        trainer.epoch = ckpt.meta_usize("epoch").unwrap_or(0);
        trainer.params = ckpt.params;
        if let Some(adam) = ckpt.optimizer {
            trainer.optimizer = adam;
        }
    }

    let path = out.join("pretrain.ckpt");
    let save = |trainer: &Pretrainer| {
        let mut ckpt = Checkpoint::new(encoder.clone(), trainer.params.clone())
            .with_meta("kind", "pretrain")
            .with_meta("epoch", trainer.epoch)
            .with_meta("seed", seed)
            .with_meta("source", &cube.name);
        ckpt.optimizer = Some(trainer.optimizer.clone());
        checkpoint::save(&ckpt, &path, cfg.precision())
    };
    let mut log = Log::create(out.join("pretrain.log"), PRETRAIN_LOG_HEADER)?;
    let mut last = None;
    while trainer.epoch < pcfg.epochs {
        trainer.run_epoch(|l| {
            log.line(&pretrain_log_line(l));
            last = Some(l.losses);
        })?;
        save(&trainer)?;
    }
    log.finish()?;
    if last.is_none() {
        save(&trainer)?;
    }
    Ok(PretrainOutcome { checkpoint: path, epochs: trainer.epoch, last })
}

fn load_teacher(path: &Path, encoder: &EncoderConfig) -> Result<ParamStore> {
    let ckpt = checkpoint::load(path)?;
    if &ckpt.encoder != encoder {
        return Err(CliError::Config(format!(
            "{}: checkpoint encoder {:?} differs from configured {:?}",
            path.display(),
            ckpt.encoder,
            encoder
        )));
    }
    let want = init_pretrain_params(encoder, 0)?;
    check_layout(&ckpt.params, &want, &path.display().to_string())?;
    Ok(ckpt.params)
}

/// Predicted labels (1-based) for every labeled pixel, 0 elsewhere.
fn label_map(params: &ParamStore, encoder: &EncoderConfig, cube: &HsiCube) -> Result<Vec<u16>> {
    let pixels: Vec<Pixel> = cube.labeled_pixels();
    let pred = predict_pixels(params, encoder, cube, &pixels, 256)?;
    let mut map = vec![0u16; cube.pixels()];
    for (&(r, c), p) in pixels.iter().zip(pred) {
        map[r * cube.width() + c] = p as u16 + 1;
    }
    Ok(map)
}

/// Fine-tunes one student per seed and writes checkpoints, logs, maps and
/// the aggregated report.
pub fn finetune(cfg: &ExperimentConfig, seeds: &[u64], teacher: &Path, out: &Path) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(CliError::Config("seeds: at least one seed is required".into()));
    }
    create_dir(out)?;
    write(&out.join("config.toml"), cfg.dump().as_bytes())?;
    let cube = load_target(cfg)?;
    check_bands(&cube, cfg.data.c_pca)?;
    let (_, reduced) = reduce(&cube, cfg.data.c_pca)?;
    let encoder = cfg.encoder_config();
    let teacher_params = load_teacher(teacher, &encoder)?;
    let mut runs: Vec<RunMetrics> = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let fcfg = cfg.finetune_config(seed, &cube.name);
        let mut log = Log::create(out.join(format!("finetune_seed{seed}.log")), FINETUNE_LOG_HEADER)?;
        let outcome = finetune_target(&teacher_params, &reduced, &encoder, &fcfg, |l| log.line(&finetune_log_line(l)))?;
        log.finish()?;
        let student = &outcome.trainer.pair.student;
        let ckpt = Checkpoint::new(encoder.clone(), student.clone())
            .with_meta("kind", "student")
            .with_meta("classes", outcome.trainer.pair.classes)
            .with_meta("epoch", outcome.trainer.epoch)
            .with_meta("seed", seed)
            .with_meta("target", &cube.name);
        checkpoint::save(&ckpt, &out.join(format!("student_seed{seed}.ckpt")), cfg.precision())?;
        let map = label_map(student, &encoder, &reduced)?;
        save_map(&out.join(format!("map_seed{seed}.ppm")), cube.height(), cube.width(), &map)?;
        runs.push(outcome.metrics);
    }
    let report = aggregate_runs(&runs)?;
    write(&out.join("report.tsv"), format_report(&report, &cube.class_names).as_bytes())?;
    Ok(report)
}

/// Scores a student checkpoint on every labeled pixel of `cube` (the
/// configured target when `None`).
pub fn eval(cfg: &ExperimentConfig, student: &Path, cube: Option<HsiCube>, out: &Path) -> Result<EvalReport> {
    create_dir(out)?;
    let cube = match cube {
        Some(c) => c,
        None => load_target(cfg)?,
    };
    let labeled = cube.labeled_pixels();
    if labeled.is_empty() {
        return Err(CliError::Core(s2daft_core::Error::Data(format!("{}: no labeled pixels", cube.name))));
    }
    let ckpt = checkpoint::load(student)?;
    if !ckpt.params.contains("head/w") {
        return Err(CliError::Config(format!("{}: checkpoint has no classifier head (head/w)", student.display())));
    }
    let encoder = ckpt.encoder.clone();
    let head_classes = ckpt.params.get("head/w")?.shape()[1];
    let classes = ckpt.meta_usize("classes").unwrap_or(head_classes);
    if classes != head_classes || cube.num_classes() > classes {
        return Err(CliError::Config(format!(
            "{}: head has {head_classes} classes, metadata {classes}, cube labels reach {}",
            student.display(),
            cube.num_classes()
        )));
    }
    check_bands(&cube, encoder.channels)?;
    let (_, reduced) = reduce(&cube, encoder.channels)?;
    let samples: Vec<(Pixel, usize)> = labeled.iter().map(|&(r, c)| ((r, c), cube.label(r, c) as usize - 1)).collect();
    let metrics = evaluate(&ckpt.params, &encoder, &reduced, &samples, classes)?;
    let report = aggregate_runs(&[metrics])?;
    write(&out.join("report.tsv"), format_report(&report, &cube.class_names).as_bytes())?;
    let map = label_map(&ckpt.params, &encoder, &reduced)?;
    save_map(&out.join("map.ppm"), cube.height(), cube.width(), &map)?;
    Ok(report)
}

