//! Token caches built from rendered pairs, and the scene-level split.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::codec::{decode_video, encode_mpli, encode_video, LatentVideo, DEFAULT_SPATIAL};
use crate::dataset::{read_json, read_video, DatasetPlan, Manifest};
use crate::dit::{latent_to_tokens, tokens_to_latent, DitConfig, FlowExample, Mat};
use crate::error::{Error, Result};
use crate::image::{Image, Video};
use crate::light::{CameraIntrinsics, LightingScript};
use crate::mpli::{build_mpli_sequence, normalize_for_codec, MpliScalers, MpliSequence};
use crate::rng;
use crate::scene::{poses, CameraKey};

/// Scenes withheld from training, chosen by seed.
pub fn held_out_scenes(scene_count: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scene_count).collect();
    ids.shuffle(&mut rng::stream(seed, &[0x5917]));
    let mut out: Vec<usize> = ids.into_iter().take(count.min(scene_count)).collect();
    out.sort_unstable();
    out
}

/// Raw patch tokens of a `4N+1`-frame video.
pub fn video_tokens(video: &Video, config: &DitConfig) -> Result<Mat> {
    let latent = encode_video(&video.frames, DEFAULT_SPATIAL)?;
    check_layout(&latent, config)?;
    latent_to_tokens(&latent.data, config)
}

fn check_layout(latent: &LatentVideo, config: &DitConfig) -> Result<()> {
    let want = [
        config.groups,
        config.latent_channels,
        config.latent_height,
        config.latent_width,
    ];
    if latent.shape() != want {
        return Err(Error::Shape(format!(
            "latent {:?} does not match model layout {want:?}",
            latent.shape()
        )));
    }
    Ok(())
}

/// Decodes generated tokens back to a video clamped to `[0, 1]`.
pub fn tokens_video(
    tokens: &Mat,
    config: &DitConfig,
    frame_count: usize,
    fps: f64,
) -> Result<Video> {
    let latent = LatentVideo {
        groups: config.groups,
        channels: config.latent_channels,
        height: config.latent_height,
        width: config.latent_width,
        spatial: DEFAULT_SPATIAL,
        frame_count,
        data: tokens_to_latent(tokens, config)?,
    };
    let frames: Vec<Image> = decode_video(&latent)?
        .into_iter()
        .map(|f| f.map(|v| v.clamp(0.0, 1.0)))
        .collect();
    Ok(Video { frames, fps })
}

pub fn mpli_sequence(
    script: &LightingScript,
    keys: &[CameraKey],
    intrinsics: &CameraIntrinsics,
    depths: &[f64],
    scalers: MpliScalers,
) -> Result<MpliSequence> {
    build_mpli_sequence(script, &poses(keys)?, intrinsics, depths, scalers)
}

/// Light latent tokens for a sequence of MPLIs.
pub fn sequence_tokens(seq: &MpliSequence, config: &DitConfig) -> Result<Mat> {
    let latents = seq
        .mplis
        .iter()
        .map(|m| encode_mpli(&normalize_for_codec(m), DEFAULT_SPATIAL))
        .collect::<Result<Vec<_>>>()?;
    let latent = LatentVideo::from_light_latents(&latents, seq.frame_count)?;
    check_layout(&latent, config)?;
    latent_to_tokens(&latent.data, config)
}

pub fn light_tokens(
    script: &LightingScript,
    keys: &[CameraKey],
    intrinsics: &CameraIntrinsics,
    depths: &[f64],
    scalers: MpliScalers,
    config: &DitConfig,
) -> Result<Mat> {
    sequence_tokens(
        &mpli_sequence(script, keys, intrinsics, depths, scalers)?,
        config,
    )
}

fn to_f32(m: &Mat) -> Arc<[f32]> {
    m.data.iter().map(|&v| v as f32).collect()
}

fn to_mat(rows: usize, cols: usize, v: &[f32]) -> Mat {
    Mat {
        rows,
        cols,
        data: v.iter().map(|&x| x as f64).collect(),
    }
}

/// One cached training pair, stored as f32 token matrices.
#[derive(Debug, Clone)]
pub struct CachedPair {
    pub pair: usize,
    pub scene: usize,
    pub light_count: usize,
    pub source: Arc<[f32]>,
    pub target: Arc<[f32]>,
    pub light: Arc<[f32]>,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub config: DitConfig,
    pub pairs: Vec<CachedPair>,
}

const BATCH_STREAM: u64 = 0xba7c;

impl TrainingSet {
    /// Renders the plan's pairs whose scene passes `keep`.
    pub fn from_plan(
        plan: &DatasetPlan,
        keep: impl Fn(usize) -> bool + Sync,
        depths: &[f64],
        scalers: MpliScalers,
        config: &DitConfig,
    ) -> Result<TrainingSet> {
        let intrinsics = plan.config.intrinsics()?;
        let pairs = plan
            .pairs
            .par_iter()
            .filter(|p| keep(p.scene))
            .map(|p| {
                let rendered = plan.render(p)?;
                Ok(CachedPair {
                    pair: p.id,
                    scene: p.scene,
                    light_count: p.script.tracks.len(),
                    source: to_f32(&video_tokens(&rendered.source, config)?),
                    target: to_f32(&video_tokens(&rendered.target, config)?),
                    light: to_f32(&light_tokens(
                        &p.script,
                        plan.trajectory_of(p),
                        &intrinsics,
                        depths,
                        scalers,
                        config,
                    )?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            config: config.clone(),
            pairs: share_sources(pairs),
        })
    }

    /// Loads pairs from a dataset directory written by `gen-dataset`.
    pub fn from_dir(
        dir: &Path,
        keep: impl Fn(usize) -> bool + Sync,
        depths: &[f64],
        scalers: MpliScalers,
        config: &DitConfig,
    ) -> Result<TrainingSet> {
        let manifest = Manifest::read(dir)?;
        let intrinsics = manifest.config.intrinsics()?;
        let fps = manifest.config.fps;
        let pairs = manifest
            .pairs
            .par_iter()
            .filter(|e| keep(e.scene))
            .map(|e| {
                let source = read_video(&dir.join(&e.source), fps)?;
                let target = read_video(&dir.join(&e.target), fps)?;
                let script: LightingScript = read_json(&dir.join(&e.script))?;
                let keys: Vec<CameraKey> = read_json(&dir.join(&e.trajectory_path))?;
                Ok(CachedPair {
                    pair: e.id,
                    scene: e.scene,
                    light_count: e.light_count,
                    source: to_f32(&video_tokens(&source, config)?),
                    target: to_f32(&video_tokens(&target, config)?),
                    light: to_f32(&light_tokens(
                        &script,
                        &keys,
                        &intrinsics,
                        depths,
                        scalers,
                        config,
                    )?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            config: config.clone(),
            pairs: share_sources(pairs),
        })
    }

    /// Same pairs with light tokens rebuilt for other plane depths.
    pub fn with_depths(
        &self,
        plan: &DatasetPlan,
        depths: &[f64],
        scalers: MpliScalers,
    ) -> Result<TrainingSet> {
        let intrinsics = plan.config.intrinsics()?;
        let pairs = self
            .pairs
            .par_iter()
            .map(|c| {
                let p = plan.pairs.get(c.pair).ok_or_else(|| {
                    Error::Manifest(format!("pair {} is not in the plan", c.pair))
                })?;
                let light = light_tokens(
                    &p.script,
                    plan.trajectory_of(p),
                    &intrinsics,
                    depths,
                    scalers,
                    &self.config,
                )?;
                Ok(CachedPair {
                    light: to_f32(&light),
                    ..c.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            config: self.config.clone(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn max_lights(&self) -> usize {
        self.pairs.iter().map(|p| p.light_count).max().unwrap_or(0)
    }

    /// Random subset of `fraction` of the pairs, chosen by seed.
    pub fn subset(&self, fraction: f64, seed: u64) -> TrainingSet {
        let keep = ((self.pairs.len() as f64 * fraction).round() as usize).min(self.pairs.len());
        let mut idx: Vec<usize> = (0..self.pairs.len()).collect();
        idx.shuffle(&mut rng::stream(seed, &[0x7b1d]));
        let mut idx: Vec<usize> = idx.into_iter().take(keep).collect();
        idx.sort_unstable();
        TrainingSet {
            config: self.config.clone(),
            pairs: idx.into_iter().map(|i| self.pairs[i].clone()).collect(),
        }
    }

    pub fn example(&self, i: usize, with_light: bool) -> FlowExample {
        let (r, c) = (self.config.tokens(), self.config.patch_dim());
        let p = &self.pairs[i];
        FlowExample {
            source: to_mat(r, c, &p.source),
            target: to_mat(r, c, &p.target),
            light: with_light.then(|| to_mat(r, c, &p.light)),
        }
    }

    /// Minibatch for training step `step`, drawn with replacement.
    pub fn batch(
        &self,
        step: u64,
        size: usize,
        seed: u64,
        with_light: bool,
    ) -> Result<Vec<FlowExample>> {
        if self.pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = rng::stream(seed, &[BATCH_STREAM, step]);
        Ok((0..size)
            .map(|_| self.example(rng.random_range(0..self.pairs.len()), with_light))
            .collect())
    }
}

/// Pairs rendered from the same scene and camera path share one source
/// video; keep a single copy of its tokens.
fn share_sources(mut pairs: Vec<CachedPair>) -> Vec<CachedPair> {
    pairs.sort_by_key(|p| p.pair);
    for i in 1..pairs.len() {
        let (head, tail) = pairs.split_at_mut(i);
        let prev = &head[i - 1];
        let cur = &mut tail[0];
        if prev.scene == cur.scene && prev.source[..] == cur.source[..] {
            cur.source = Arc::clone(&prev.source);
        }
    }
    pairs
}

pub fn scene_filter(held_out: &[usize]) -> impl Fn(usize) -> bool + Sync {
    let set: BTreeSet<usize> = held_out.iter().copied().collect();
    move |s| !set.contains(&s)
}
