//! Paired relighting dataset: scene/trajectory/script planning, rendering and
//! the on-disk layout.
//!
//! Every assembled scene is filmed along several camera trajectories, and
//! each (scene, trajectory) pair yields one clip per light batch:
//!
//! 1. a fixed light slightly behind the first camera position,
//! 2. a fixed light with random parameters,
//! 3. a light whose parameters change over time in exactly one respect.
//!
//! Planning is pure and cheap; rendering happens per pair on demand.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::light::{CameraIntrinsics, Keyframe, LightTrack, LightingScript, PointLight};
use crate::rltk;
use crate::rng;
use crate::scene::{
    generate_pair, CameraKey, GroundPlane, PositionTrack, RenderedPair, SceneSpec, Sphere,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    FixedBehindCamera,
    FixedRandom,
    TimeVarying,
}

impl Batch {
    pub const ALL: [Batch; 3] = [
        Batch::FixedBehindCamera,
        Batch::FixedRandom,
        Batch::TimeVarying,
    ];
}

/// The single parameter that changes over time in a batch-3 script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaryingParam {
    Position2d,
    Depth,
    Color,
    Intensity,
}

impl VaryingParam {
    pub const ALL: [VaryingParam; 4] = [
        VaryingParam::Position2d,
        VaryingParam::Depth,
        VaryingParam::Color,
        VaryingParam::Intensity,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Randomization ranges for added lights, in first-frame camera coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LightRanges {
    pub x: Range,
    pub y: Range,
    pub z: Range,
    /// Depth range for batch-1 lights (negative: behind the camera).
    pub behind_z: Range,
    pub behind_xy: Range,
    pub intensity: Range,
    /// Lower bound on each color channel before rescaling to max 1.
    pub min_channel: f64,
}

impl Default for LightRanges {
    fn default() -> Self {
        LightRanges {
            x: Range::new(-2.0, 2.0),
            y: Range::new(-1.5, 0.5),
            z: Range::new(1.0, 6.5),
            behind_z: Range::new(-1.0, -0.2),
            behind_xy: Range::new(-1.0, 1.0),
            intensity: Range::new(1.5, 6.0),
            min_channel: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scenes: usize,
    pub trajectories_per_scene: usize,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub fps: f64,
    pub focal_px: f64,
    pub light_ranges: LightRanges,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scenes: 60,
            trajectories_per_scene: 4,
            width: 48,
            height: 48,
            frame_count: 17,
            fps: 8.0,
            focal_px: 48.0,
            light_ranges: LightRanges::default(),
        }
    }
}

impl DatasetConfig {
    /// 652 scenes at 384x672 with 77 frames.
    pub fn full_scale() -> Self {
        DatasetConfig {
            scenes: 652,
            width: 672,
            height: 384,
            frame_count: 77,
            fps: 16.0,
            focal_px: 672.0,
            ..DatasetConfig::default()
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.focal_px, self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count % 4 != 1 || self.frame_count < 5 {
            return Err(Error::FrameCount(self.frame_count));
        }
        if self.scenes == 0 || self.trajectories_per_scene == 0 {
            return Err(Error::Config(
                "scene and trajectory counts must be >= 1".into(),
            ));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        self.intrinsics()?;
        Ok(())
    }

    pub fn pair_count(&self) -> usize {
        self.scenes * self.trajectories_per_scene * Batch::ALL.len()
    }

    pub fn duration(&self) -> f64 {
        (self.frame_count - 1) as f64 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPair {
    pub id: usize,
    pub scene: usize,
    pub trajectory: usize,
    pub batch: Batch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varying: Option<VaryingParam>,
    pub seed: u64,
    pub script: LightingScript,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPlan {
    pub config: DatasetConfig,
    pub seed: u64,
    pub scenes: Vec<SceneSpec>,
    /// `trajectories[scene][k]`, one camera key per frame.
    pub trajectories: Vec<Vec<Vec<CameraKey>>>,
    pub pairs: Vec<PlannedPair>,
}

const STREAM_SCENE: u64 = 1;
const STREAM_TRAJECTORY: u64 = 2;
const STREAM_LIGHT: u64 = 3;

fn random_color(rng: &mut ChaCha8Rng, min_channel: f64) -> Vec3 {
    let c = Vec3::new(
        rng.random_range(min_channel..1.0),
        rng.random_range(min_channel..1.0),
        rng.random_range(min_channel..1.0),
    );
    c / c.max_element()
}

pub fn random_scene(seed: u64, index: usize, duration: f64) -> SceneSpec {
    let mut rng = rng::stream(seed, &[STREAM_SCENE, index as u64]);
    let ground_h = rng.random_range(0.9..1.3);
    let tint = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        Vec3::new(
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
        )
    };
    let ground = GroundPlane {
        height: ground_h,
        albedo: tint(&mut rng, 0.35, 0.85),
    };
    let count = rng.random_range(2..=4);
    let mut starts = Vec::with_capacity(count);
    let mut spheres = Vec::with_capacity(count);
    for _ in 0..count {
        let radius = rng.random_range(0.3..0.65);
        let lift = rng.random_range(0.0..0.5);
        let start = Vec3::new(
            rng.random_range(-1.4..1.4),
            ground_h - radius - lift,
            rng.random_range(3.5..6.0),
        );
        let motion = Vec3::new(
            rng.random_range(-0.6..0.6),
            -rng.random_range(0.0..0.3),
            rng.random_range(-0.4..0.4),
        );
        starts.push(start);
        spheres.push((radius, tint(&mut rng, 0.2, 0.95), motion));
    }
    // centre the group laterally so the first camera looks straight at it
    let mean_x = starts.iter().map(|s| s.x).sum::<f64>() / count as f64;
    let spheres = starts
        .into_iter()
        .zip(spheres)
        .map(|(s, (radius, albedo, motion))| {
            let s = Vec3::new(s.x - mean_x, s.y, s.z);
            Sphere {
                center: PositionTrack {
                    keys: vec![(0.0, s), (duration, s + motion)],
                },
                radius,
                albedo,
            }
        })
        .collect();
    let ambient = Vec3::splat(rng.random_range(0.04..0.12));
    let key_light = PointLight {
        position: Vec3::new(
            rng.random_range(-4.0..4.0),
            rng.random_range(-5.0..-3.0),
            rng.random_range(0.0..4.0),
        ),
        color: Vec3::new(
            1.0,
            rng.random_range(0.85..1.0),
            rng.random_range(0.7..0.95),
        ),
        intensity: rng.random_range(7.0..13.0),
    };
    SceneSpec {
        spheres,
        ground: Some(ground),
        ambient,
        base_lights: vec![LightTrack::constant(key_light)],
    }
}

/// Camera path starting at the origin looking down +Z and tracking the
/// centroid of the moving spheres.
pub fn random_trajectory(
    seed: u64,
    scene_index: usize,
    k: usize,
    scene: &SceneSpec,
    frame_count: usize,
    fps: f64,
) -> Vec<CameraKey> {
    let mut rng = rng::stream(seed, &[STREAM_TRAJECTORY, scene_index as u64, k as u64]);
    let end = Vec3::new(
        rng.random_range(-0.8..0.8),
        rng.random_range(-0.3..0.15),
        rng.random_range(-0.3..0.6),
    );
    let c0 = scene.centroid(0.0);
    // offset so the first frame looks along +Z exactly
    let offset = Vec3::new(0.0, -c0.y, 0.0);
    (0..frame_count)
        .map(|f| {
            let t = f as f64 / fps;
            let w = f as f64 / (frame_count - 1) as f64;
            CameraKey {
                t,
                position: Vec3::ZERO.lerp(end, w),
                look_at: scene.centroid(t) + offset,
            }
        })
        .collect()
}

fn random_fixed_light(rng: &mut ChaCha8Rng, r: &LightRanges) -> PointLight {
    PointLight {
        position: Vec3::new(r.x.sample(rng), r.y.sample(rng), r.z.sample(rng)),
        color: random_color(rng, r.min_channel),
        intensity: r.intensity.sample(rng),
    }
}

pub fn random_script(
    seed: u64,
    pair_id: usize,
    batch: Batch,
    config: &DatasetConfig,
) -> (LightingScript, Option<VaryingParam>) {
    let mut rng = rng::stream(seed, &[STREAM_LIGHT, pair_id as u64]);
    let r = &config.light_ranges;
    let (track, varying) = match batch {
        Batch::FixedBehindCamera => {
            let light = PointLight {
                position: Vec3::new(
                    r.behind_xy.sample(&mut rng),
                    r.behind_xy.sample(&mut rng).min(r.y.hi),
                    r.behind_z.sample(&mut rng),
                ),
                color: random_color(&mut rng, r.min_channel),
                intensity: r.intensity.sample(&mut rng),
            };
            (LightTrack::constant(light), None)
        }
        Batch::FixedRandom => (LightTrack::constant(random_fixed_light(&mut rng, r)), None),
        Batch::TimeVarying => {
            let start = random_fixed_light(&mut rng, r);
            let param = VaryingParam::ALL[rng.random_range(0..VaryingParam::ALL.len())];
            let mut end = start;
            // resample until the chosen parameter actually differs
            while end == start {
                match param {
                    VaryingParam::Position2d => {
                        end.position.x = r.x.sample(&mut rng);
                        end.position.y = r.y.sample(&mut rng);
                    }
                    VaryingParam::Depth => end.position.z = r.z.sample(&mut rng),
                    VaryingParam::Color => end.color = random_color(&mut rng, r.min_channel),
                    VaryingParam::Intensity => end.intensity = r.intensity.sample(&mut rng),
                }
            }
            let track = LightTrack {
                keyframes: vec![
                    Keyframe {
                        t: 0.0,
                        light: start,
                    },
                    Keyframe {
                        t: config.duration(),
                        light: end,
                    },
                ],
            };
            (track, Some(param))
        }
    };
    (
        LightingScript {
            fps: config.fps,
            frame_count: config.frame_count,
            tracks: vec![track],
        },
        varying,
    )
}

/// Which of the four parameter groups differ between two lights.
pub fn changed_params(a: &PointLight, b: &PointLight) -> Vec<VaryingParam> {
    let mut out = Vec::new();
    if a.position.x != b.position.x || a.position.y != b.position.y {
        out.push(VaryingParam::Position2d);
    }
    if a.position.z != b.position.z {
        out.push(VaryingParam::Depth);
    }
    if a.color != b.color {
        out.push(VaryingParam::Color);
    }
    if a.intensity != b.intensity {
        out.push(VaryingParam::Intensity);
    }
    out
}

/// Checks a script against its batch rule; returns a description of the
/// first violation.
pub fn check_batch_rule(script: &LightingScript, batch: Batch) -> std::result::Result<(), String> {
    if script.tracks.len() != 1 {
        return Err(format!("expected one track, found {}", script.tracks.len()));
    }
    let keys = &script.tracks[0].keyframes;
    match batch {
        Batch::FixedBehindCamera => {
            if keys.len() != 1 {
                return Err(format!("expected a single keyframe, found {}", keys.len()));
            }
            if !(keys[0].light.position.z < 0.0) {
                return Err("light is not behind the camera".into());
            }
        }
        Batch::FixedRandom => {
            if keys.len() != 1 {
                return Err(format!("expected a single keyframe, found {}", keys.len()));
            }
        }
        Batch::TimeVarying => {
            if keys.len() < 2 {
                return Err("time-varying script needs at least two keyframes".into());
            }
            let mut all = Vec::new();
            for pair in keys.windows(2) {
                for p in changed_params(&pair[0].light, &pair[1].light) {
                    if !all.contains(&p) {
                        all.push(p);
                    }
                }
            }
            if all.len() != 1 {
                return Err(format!(
                    "expected exactly one varying parameter, found {all:?}"
                ));
            }
        }
    }
    Ok(())
}

pub fn plan_dataset(config: &DatasetConfig, seed: u64) -> Result<DatasetPlan> {
    config.validate()?;
    let duration = config.duration();
    let scenes: Vec<SceneSpec> = (0..config.scenes)
        .map(|s| random_scene(seed, s, duration))
        .collect();
    let trajectories = scenes
        .iter()
        .enumerate()
        .map(|(s, scene)| {
            (0..config.trajectories_per_scene)
                .map(|k| random_trajectory(seed, s, k, scene, config.frame_count, config.fps))
                .collect()
        })
        .collect();
    let mut pairs = Vec::with_capacity(config.pair_count());
    for scene in 0..config.scenes {
        for trajectory in 0..config.trajectories_per_scene {
            for batch in Batch::ALL {
                let id = pairs.len();
                let (script, varying) = random_script(seed, id, batch, config);
                pairs.push(PlannedPair {
                    id,
                    scene,
                    trajectory,
                    batch,
                    varying,
                    seed: rng::derive(seed, &[STREAM_LIGHT, id as u64]),
                    script,
                });
            }
        }
    }
    Ok(DatasetPlan {
        config: config.clone(),
        seed,
        scenes,
        trajectories,
        pairs,
    })
}

impl DatasetPlan {
    pub fn trajectory_of(&self, pair: &PlannedPair) -> &[CameraKey] {
        &self.trajectories[pair.scene][pair.trajectory]
    }

    pub fn render(&self, pair: &PlannedPair) -> Result<RenderedPair> {
        generate_pair(
            &self.scenes[pair.scene],
            self.trajectory_of(pair),
            &pair.script,
            &self.config.intrinsics()?,
            pair.seed,
        )
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            seed: self.seed,
            config: self.config.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| ManifestEntry {
                    id: p.id,
                    scene: p.scene,
                    trajectory: p.trajectory,
                    batch: p.batch,
                    varying: p.varying,
                    seed: p.seed,
                    light_count: p.script.tracks.len(),
                    source: pair_path(p.id, "source.rltk"),
                    target: pair_path(p.id, "target.rltk"),
                    script: pair_path(p.id, "script.json"),
                    trajectory_path: pair_path(p.id, "trajectory.json"),
                    scene_path: scene_path(p.scene),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub scene: usize,
    pub trajectory: usize,
    pub batch: Batch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varying: Option<VaryingParam>,
    pub seed: u64,
    pub light_count: usize,
    pub source: String,
    pub target: String,
    pub script: String,
    #[serde(rename = "trajectory_file")]
    pub trajectory_path: String,
    #[serde(rename = "scene_file")]
    pub scene_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: DatasetConfig,
    pub pairs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))
    }

    /// Largest number of added lights in any pair.
    pub fn max_lights(&self) -> usize {
        self.pairs.iter().map(|p| p.light_count).max().unwrap_or(0)
    }
}

fn pair_path(id: usize, file: &str) -> String {
    format!("pairs/{id:05}/{file}")
}

fn scene_path(scene: usize) -> String {
    format!("scenes/{scene:04}.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

pub fn write_video(path: &Path, video: &crate::image::Video) -> Result<()> {
    rltk::write_f64(path, &video.shape(), &video.flat())
}

pub fn read_video(path: &Path, fps: f64) -> Result<crate::image::Video> {
    let t = rltk::read(path)?;
    let shape: [usize; 4] = t.shape.as_slice().try_into().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        reason: format!("expected a [frames, H, W, 3] tensor, got {:?}", t.shape),
    })?;
    crate::image::Video::from_flat(shape, &t.to_f64(), fps)
}

/// Renders and writes every planned pair under `dir`. Returns the manifest.
pub fn generate_dataset(config: &DatasetConfig, seed: u64, dir: &Path) -> Result<Manifest> {
    let plan = plan_dataset(config, seed)?;
    write_plan(&plan, dir)
}

pub fn write_plan(plan: &DatasetPlan, dir: &Path) -> Result<Manifest> {
    let mkdir = |p: PathBuf| std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e));
    mkdir(dir.join("scenes"))?;
    for (i, scene) in plan.scenes.iter().enumerate() {
        write_json(&dir.join(scene_path(i)), scene)?;
    }
    plan.pairs.par_iter().try_for_each(|p| -> Result<()> {
        let pdir = dir.join(format!("pairs/{:05}", p.id));
        mkdir(pdir.clone())?;
        let pair = plan.render(p)?;
        write_video(&pdir.join("source.rltk"), &pair.source)?;
        write_video(&pdir.join("target.rltk"), &pair.target)?;
        write_json(&pdir.join("script.json"), &pair.script)?;
        write_json(&pdir.join("trajectory.json"), &pair.trajectory)
    })?;
    let manifest = plan.manifest();
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
