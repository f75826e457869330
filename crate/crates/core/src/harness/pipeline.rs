//! Two-stage training: base pretraining on source-conditioned generation,
//! then relight finetuning with the light adapter.

use serde::{Deserialize, Serialize};

use super::data::{tokens_video, video_tokens, TrainingSet};
use crate::dataset::DatasetConfig;
use crate::dit::{
    euler_sample, train_step, AdapterInit, Dit, DitConfig, DitField, Mat, TrainConfig, TrainState,
};
use crate::error::{Error, Result};
use crate::image::Video;
use crate::mpli::{MpliScalers, DEFAULT_DEPTHS};

/// Scalers for desk-scale training: `(I/5) / (r^2 + 0.25)`. Light
/// intensities up to about 6 then stay mostly below the codec clamp at 1,
/// so brighter lights still give brighter light images.
pub const DESK_SCALERS: MpliScalers = MpliScalers { s1: 0.2, s2: 1.25 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub dataset_seed: u64,
    /// Number of scenes withheld from training.
    pub held_out: usize,
    pub model: DitConfig,
    pub pretrain: TrainConfig,
    pub pretrain_steps: u64,
    pub finetune: TrainConfig,
    pub finetune_steps: u64,
    pub batch_size: usize,
    pub sampler_steps: usize,
    pub depths: Vec<f64>,
    /// Light image scalers used for training and evaluation.
    pub scalers: MpliScalers,
    /// Fraction of the training pairs used for finetuning.
    pub data_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: DatasetConfig::default(),
            dataset_seed: 0,
            held_out: 5,
            model: DitConfig {
                width: 64,
                ..DitConfig::default()
            },
            pretrain: TrainConfig::default(),
            pretrain_steps: 5000,
            finetune: TrainConfig::default(),
            finetune_steps: 5000,
            batch_size: 4,
            sampler_steps: 5,
            depths: DEFAULT_DEPTHS.to_vec(),
            scalers: DESK_SCALERS,
            data_fraction: 1.0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.batch_size == 0 || self.sampler_steps == 0 {
            return Err(Error::Config(
                "batch size and sampler steps must be positive".into(),
            ));
        }
        if self.held_out >= self.dataset.scenes {
            return Err(Error::Config("every scene is held out".into()));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config("data fraction must be in (0, 1]".into()));
        }
        MpliScalers::new(self.scalers.s1, self.scalers.s2)?;
        if !matches!(self.depths.len(), 1 | 4) {
            return Err(Error::PlaneCount(self.depths.len()));
        }
        let groups = self.dataset.frame_count.div_ceil(4);
        let spatial = crate::codec::DEFAULT_SPATIAL;
        let want = [
            groups,
            crate::codec::latent_channels(spatial),
            self.dataset.height / spatial,
            self.dataset.width / spatial,
        ];
        let got = [
            self.model.groups,
            self.model.latent_channels,
            self.model.latent_height,
            self.model.latent_width,
        ];
        if want != got {
            return Err(Error::Config(format!(
                "model latent layout {got:?} does not match the dataset's {want:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    /// Mean of the last `n` recorded losses.
    pub fn final_loss(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        if tail.is_empty() {
            f64::NAN
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }
}

fn run(
    mut state: TrainState,
    set: &TrainingSet,
    steps: u64,
    batch: usize,
    with_light: bool,
    mut log: impl FnMut(u64, f64),
) -> Result<TrainOutcome> {
    let mut losses = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let b = set.batch(state.step, batch, state.seed, with_light)?;
        let loss = train_step(&mut state, &b)?;
        log(state.step, loss);
        losses.push(loss);
    }
    Ok(TrainOutcome { state, losses })
}

/// Trains the base model to generate target latents from source latents,
/// without any light input.
pub fn pretrain_base(
    set: &TrainingSet,
    config: &PipelineConfig,
    seed: u64,
    log: impl FnMut(u64, f64),
) -> Result<TrainOutcome> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = Dit::init_base(config.model.clone(), seed)?;
    let state = TrainState::new(model, config.pretrain, seed)?;
    run(
        state,
        set,
        config.pretrain_steps,
        config.batch_size,
        false,
        log,
    )
}

/// Finetunes a base model for relighting; only attention, LoRA, adapter
/// and gain tensors change.
pub fn finetune_relight(
    base: &Dit,
    set: &TrainingSet,
    config: &PipelineConfig,
    mode: AdapterInit,
    seed: u64,
    log: impl FnMut(u64, f64),
) -> Result<TrainOutcome> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (a, b) = (&base.config, &set.config);
    if (a.tokens(), a.patch_dim()) != (b.tokens(), b.patch_dim()) {
        return Err(Error::Config(
            "base model layout does not match the training set".into(),
        ));
    }
    let model = base.to_relight(mode, seed)?;
    let state = TrainState::new(model, config.finetune, seed)?;
    if config.data_fraction < 1.0 {
        let subset = set.subset(config.data_fraction, seed);
        if subset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        return run(
            state,
            &subset,
            config.finetune_steps,
            config.batch_size,
            true,
            log,
        );
    }
    run(
        state,
        set,
        config.finetune_steps,
        config.batch_size,
        true,
        log,
    )
}

/// Produces a relit video for one evaluation case.
pub trait Relighter: Sync {
    fn name(&self) -> &str;
    fn relight(&self, case: &Case) -> Result<Video>;
}

/// Everything a relighter may look at for one clip. The oracle target is
/// only used by reference stubs.
#[derive(Debug, Clone)]
pub struct Case {
    pub source: Video,
    pub oracle: Video,
    pub light: Mat,
}

pub struct ModelRelighter<'a> {
    pub model: &'a Dit,
    pub steps: usize,
    pub seed: u64,
}

impl Relighter for ModelRelighter<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn relight(&self, case: &Case) -> Result<Video> {
        relight_video(self.model, &case.source, &case.light, self.steps, self.seed)
    }
}

/// Samples a relit video from `source` and light tokens.
pub fn relight_video(
    model: &Dit,
    source: &Video,
    light: &Mat,
    steps: usize,
    seed: u64,
) -> Result<Video> {
    let cfg = &model.config;
    let src = video_tokens(source, cfg)?;
    let field = DitField {
        model,
        source: &src,
        light: Some(light),
    };
    let out = euler_sample(&field, cfg.tokens(), cfg.patch_dim(), steps, seed)?;
    tokens_video(&out, cfg, source.len(), source.fps)
}

/// Returns the oracle target unchanged.
pub struct OracleReplay;

impl Relighter for OracleReplay {
    fn name(&self) -> &str {
        "oracle_replay"
    }

    fn relight(&self, case: &Case) -> Result<Video> {
        Ok(case.oracle.clone())
    }
}

/// Returns the source unchanged.
pub struct CopySource;

impl Relighter for CopySource {
    fn name(&self) -> &str {
        "copy_source"
    }

    fn relight(&self, case: &Case) -> Result<Video> {
        Ok(case.source.clone())
    }
}
