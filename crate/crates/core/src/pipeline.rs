//! Source pretraining followed by few-shot target fine-tuning.

use alloc::vec::Vec;

use crate::daft::{evaluate, FinetuneConfig, FinetuneLog, Finetuner, TeacherStudent};
use crate::data::{extract_patches, fit_pca, sample_few_shot, FewShotSplit, HsiCube, PcaModel, TokenBatch};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::model::{init_pretrain_params, EncoderConfig};
use crate::params::ParamStore;
use crate::pretrain::{PretrainConfig, Pretrainer, StepLog};

/// PCA to `c_pca` components, with every score divided by the standard
/// deviation of the first component so the leading direction has unit
/// variance, matching the scale of the diffusion noise.
pub fn reduce(cube: &HsiCube, c_pca: usize) -> Result<(PcaModel, HsiCube)> {
    let pca = fit_pca(cube, c_pca)?;
    let reduced = pca.transform(cube)?;
    let top = pca.explained_variance.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok((pca, reduced));
    }
    let inv = 1.0 / libm::sqrt(top);
    let data: Vec<f64> = reduced.reflectance().iter().map(|v| v * inv).collect();
    let mut out = HsiCube::new(reduced.name.clone(), reduced.height(), reduced.width(), reduced.bands(), data, Some(reduced.labels().to_vec()))?;
    out.class_names = reduced.class_names;
    Ok((pca, out))
}

/// Tokens of every pixel of `cube`.
pub fn pretrain_batch(cube: &HsiCube, encoder: &EncoderConfig, masking_ratio: f64, seed: u64) -> Result<TokenBatch> {
    extract_patches(cube, &cube.all_pixels(), encoder.window, encoder.patch, masking_ratio, seed)
}

/// Fresh parameters trained for `config.epochs` on every pixel of `cube`.
pub fn pretrain_source(cube: &HsiCube, encoder: &EncoderConfig, config: &PretrainConfig, mut on_step: impl FnMut(&StepLog)) -> Result<Pretrainer> {
    let params = init_pretrain_params(encoder, config.seed)?;
    let batch = pretrain_batch(cube, encoder, config.masking_ratio, config.seed)?;
    let mut trainer = Pretrainer::new(params, encoder.clone(), config.clone(), batch)?;
    while trainer.epoch < config.epochs {
        trainer.run_epoch(&mut on_step)?;
    }
    Ok(trainer)
}

/// Result of fine-tuning on a target cube.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub trainer: Finetuner,
    pub split: FewShotSplit,
    pub metrics: RunMetrics,
}

/// Few-shot split, teacher/student fine-tuning for `config.epochs`, and
/// evaluation on every labeled pixel outside the training set.
pub fn finetune_target(
    pretrained: &ParamStore,
    cube: &HsiCube,
    encoder: &EncoderConfig,
    config: &FinetuneConfig,
    mut on_step: impl FnMut(&FinetuneLog),
) -> Result<FinetuneOutcome> {
    let classes = cube.num_classes();
    if classes < 2 {
        return Err(Error::Data("target cube needs at least 2 labeled classes".into()));
    }
    let split = sample_few_shot(cube, config.shots, config.seed, false)?;
    let pair = TeacherStudent::from_pretrained(pretrained, encoder, classes, config.seed)?;
    let mut trainer = Finetuner::new(pair, encoder.clone(), config.clone(), cube, &split)?;
    while trainer.epoch < config.epochs {
        trainer.run_epoch(&mut on_step)?;
    }
    let metrics = evaluate(&trainer.pair.student, encoder, cube, &split.test_samples(), classes)?;
    Ok(FinetuneOutcome { trainer, split, metrics })
}
