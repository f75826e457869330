//! Controllability suites: held-out pairs, intensity ladder, color,
//! position, depth and a moving color-shifting light.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{mpli_sequence, sequence_tokens};
use super::metrics::{
    angle_between, gain_centroid, hue_degrees, mean_delta, psnr, strictly_increasing, Db,
};
use super::pipeline::{Case, Relighter};
use crate::dataset::DatasetPlan;
use crate::dit::DitConfig;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::{Image, Video};
use crate::light::{Keyframe, LightTrack, LightingScript, PointLight};
use crate::mpli::{visualize_mpli, MpliScalers, MpliSequence};
use crate::scene::{generate_pair, CameraKey};

/// Fixed light placements used by the suites, in first-frame camera
/// coordinates (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub anchor: Vec3,
    /// Ladder rungs are `{0, I, 2I, 4I}` with this `I`.
    pub ladder_intensity: f64,
    pub color_intensity: f64,
    pub position_offset: [f64; 2],
    pub depths: Vec<f64>,
    pub include_pairs: bool,
    /// Largest hue error accepted by the color suite, degrees.
    pub hue_tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            anchor: Vec3::new(0.0, -0.6, 2.5),
            ladder_intensity: 1.5,
            color_intensity: 4.0,
            position_offset: [1.3, 0.6],
            depths: vec![1.5, 2.5, 3.5, 5.0],
            include_pairs: true,
            hue_tolerance: 45.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub suite: String,
    pub scene: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<usize>,
    pub script: LightingScript,
    pub psnr: Db,
    /// PSNR of the unmodified source against the oracle target.
    pub baseline_psnr: Db,
    pub mean_luminance: f64,
    pub oracle_luminance: f64,
    pub source_luminance: f64,
    /// Mean `generated - source` per channel.
    pub delta_rgb: [f64; 3],
    pub oracle_delta_rgb: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    /// Pairs entering the means.
    pub pairs: usize,
    /// Pairs left out because source and target are identical (the light
    /// never reaches a visible surface), so the baseline PSNR is infinite.
    pub unchanged: usize,
    pub mean_psnr: Db,
    pub mean_baseline_psnr: Db,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderResult {
    pub scene: usize,
    pub intensities: Vec<f64>,
    pub luminance: Vec<f64>,
    pub oracle_luminance: Vec<f64>,
    pub monotone: bool,
    pub oracle_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorResult {
    pub color: String,
    pub light_rgb: [f64; 3],
    /// Hue the response is compared against: the light's hue, or for white
    /// light the hue of the oracle's change.
    pub reference_hue: Option<f64>,
    pub response_hue: Option<f64>,
    pub angle: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionResult {
    pub scene: usize,
    /// Gain centroids for top-left, center and bottom-right lights.
    pub centroids: Vec<Option<(f64, f64)>>,
    pub oracle_centroids: Vec<Option<(f64, f64)>>,
    /// Moving the light from top-left to bottom-right shifts the generated
    /// centroid the same way as the oracle's, on both axes.
    pub pass: bool,
    /// The oracle's centroids move strictly right and down. Ground-heavy
    /// scenes often fail this on the vertical axis.
    pub oracle_ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResult {
    pub scene: usize,
    pub depths: Vec<f64>,
    pub luminance: Vec<f64>,
    pub oracle_luminance: Vec<f64>,
    pub psnr: Vec<Db>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalResult {
    pub scene: usize,
    pub psnr: Db,
    pub centroid_first: Option<(f64, f64)>,
    pub centroid_last: Option<(f64, f64)>,
    pub moves_right: bool,
    pub hue_first: Option<f64>,
    pub hue_last: Option<f64>,
    /// Response hue ends closer to green than it starts.
    pub shifts_to_green: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub relighter: String,
    pub held_out_scenes: Vec<usize>,
    pub suite: SuiteConfig,
    pub records: Vec<ExperimentRecord>,
    pub pairs: Option<PairSummary>,
    pub intensity: Vec<LadderResult>,
    pub intensity_passes: usize,
    pub color: Vec<ColorResult>,
    pub color_passes: usize,
    pub position: Vec<PositionResult>,
    pub position_passes: usize,
    pub depth: Vec<DepthResult>,
    pub temporal: Vec<TemporalResult>,
}

/// Oracle render, model input and bookkeeping for one experiment.
pub struct Prepared {
    pub id: String,
    pub suite: &'static str,
    pub scene: usize,
    pub pair: Option<usize>,
    pub script: LightingScript,
    pub case: Case,
    pub mpli: MpliSequence,
}

pub struct Evaluated {
    pub prep: Prepared,
    pub generated: Video,
    pub record: ExperimentRecord,
}

pub struct EvalContext<'a> {
    pub plan: &'a DatasetPlan,
    pub held_out: &'a [usize],
    pub depths: &'a [f64],
    pub scalers: MpliScalers,
    pub model: &'a DitConfig,
}

impl EvalContext<'_> {
    pub fn keys(&self, scene: usize) -> &[CameraKey] {
        &self.plan.trajectories[scene][0]
    }

    pub fn fixed_script(&self, lights: &[PointLight]) -> LightingScript {
        LightingScript {
            fps: self.plan.config.fps,
            frame_count: self.plan.config.frame_count,
            tracks: lights.iter().map(|&l| LightTrack::constant(l)).collect(),
        }
    }

    pub fn prepare(
        &self,
        id: String,
        suite: &'static str,
        scene: usize,
        keys: &[CameraKey],
        script: LightingScript,
        pair: Option<usize>,
    ) -> Result<Prepared> {
        let intrinsics = self.plan.config.intrinsics()?;
        let rendered = generate_pair(&self.plan.scenes[scene], keys, &script, &intrinsics, 0)?;
        let mpli = mpli_sequence(&script, keys, &intrinsics, self.depths, self.scalers)?;
        let light = sequence_tokens(&mpli, self.model)?;
        Ok(Prepared {
            id,
            suite,
            scene,
            pair,
            script,
            case: Case {
                source: rendered.source,
                oracle: rendered.target,
                light,
            },
            mpli,
        })
    }
}

pub fn evaluate(relighter: &dyn Relighter, prep: Prepared) -> Result<Evaluated> {
    let generated = relighter.relight(&prep.case)?;
    let c = &prep.case;
    let record = ExperimentRecord {
        id: prep.id.clone(),
        suite: prep.suite.to_string(),
        scene: prep.scene,
        pair: prep.pair,
        script: prep.script.clone(),
        psnr: psnr(&generated, &c.oracle)?,
        baseline_psnr: psnr(&c.source, &c.oracle)?,
        mean_luminance: generated.mean_luminance(),
        oracle_luminance: c.oracle.mean_luminance(),
        source_luminance: c.source.mean_luminance(),
        delta_rgb: mean_delta(&generated, &c.source)?,
        oracle_delta_rgb: mean_delta(&c.oracle, &c.source)?,
    };
    Ok(Evaluated {
        prep,
        generated,
        record,
    })
}

pub fn evaluate_all(relighter: &dyn Relighter, preps: Vec<Prepared>) -> Result<Vec<Evaluated>> {
    preps
        .into_par_iter()
        .map(|p| evaluate(relighter, p))
        .collect()
}

/// Mean of PSNR values; any infinite member makes the mean infinite.
pub fn mean_db(xs: impl IntoIterator<Item = Db>) -> Db {
    let v: Vec<f64> = xs.into_iter().map(|d| d.0).collect();
    if v.is_empty() {
        return Db(f64::NAN);
    }
    Db(v.iter().sum::<f64>() / v.len() as f64)
}

pub const COLORS: [(&str, [f64; 3]); 4] = [
    ("white", [1.0, 1.0, 1.0]),
    ("red", [1.0, 0.05, 0.05]),
    ("green", [0.05, 1.0, 0.05]),
    ("blue", [0.05, 0.05, 1.0]),
];

const POSITIONS: [&str; 3] = ["top_left", "center", "bottom_right"];

fn rgb(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn fmt_id(suite: &str, scene: usize, tail: &str) -> String {
    format!("{suite}/s{scene:03}/{tail}")
}

/// Runs every suite on the held-out scenes.
pub fn evaluate_controllability(
    relighter: &dyn Relighter,
    ctx: &EvalContext,
    suite: &SuiteConfig,
    sheets: Option<&Path>,
) -> Result<EvalReport> {
    if ctx.held_out.is_empty() {
        return Err(Error::Config("no held-out scenes to evaluate".into()));
    }
    let mut preps = Vec::new();
    if suite.include_pairs {
        for p in ctx
            .plan
            .pairs
            .iter()
            .filter(|p| ctx.held_out.contains(&p.scene))
        {
            preps.push(ctx.prepare(
                format!("pairs/{:05}", p.id),
                "pairs",
                p.scene,
                ctx.plan.trajectory_of(p),
                p.script.clone(),
                Some(p.id),
            )?);
        }
    }
    let a = suite.anchor;
    let ladder: Vec<f64> = [0.0, 1.0, 2.0, 4.0]
        .iter()
        .map(|k| k * suite.ladder_intensity)
        .collect();
    let [ox, oy] = suite.position_offset;
    let placements = [
        Vec3::new(a.x - ox, a.y - oy, a.z),
        a,
        Vec3::new(a.x + ox, a.y + oy, a.z),
    ];
    for &s in ctx.held_out {
        let keys = ctx.keys(s);
        for (i, &intensity) in ladder.iter().enumerate() {
            let script = ctx.fixed_script(&[PointLight::white(a, intensity)]);
            preps.push(ctx.prepare(
                fmt_id("intensity", s, &format!("i{i}")),
                "intensity",
                s,
                keys,
                script,
                None,
            )?);
        }
        for (name, c) in COLORS {
            let l = PointLight {
                position: a,
                color: rgb(c),
                intensity: suite.color_intensity,
            };
            preps.push(ctx.prepare(
                fmt_id("color", s, name),
                "color",
                s,
                keys,
                ctx.fixed_script(&[l]),
                None,
            )?);
        }
        for (name, p) in POSITIONS.iter().zip(placements) {
            let l = PointLight::white(p, suite.color_intensity);
            preps.push(ctx.prepare(
                fmt_id("position", s, name),
                "position",
                s,
                keys,
                ctx.fixed_script(&[l]),
                None,
            )?);
        }
        for (i, &z) in suite.depths.iter().enumerate() {
            let l = PointLight::white(Vec3::new(a.x, a.y, z), suite.color_intensity);
            preps.push(ctx.prepare(
                fmt_id("depth", s, &format!("d{i}")),
                "depth",
                s,
                keys,
                ctx.fixed_script(&[l]),
                None,
            )?);
        }
        let script = moving_script(ctx, placements[0], placements[2], suite.color_intensity);
        preps.push(ctx.prepare(
            fmt_id("temporal", s, "sweep"),
            "temporal",
            s,
            keys,
            script,
            None,
        )?);
    }

    let done = evaluate_all(relighter, preps)?;
    if let Some(dir) = sheets {
        write_sheets(&done, dir)?;
    }
    Ok(summarise(relighter.name(), ctx, suite, &done, &ladder))
}

/// Light moving from `from` to `to` while its color turns red to green.
pub fn moving_script(ctx: &EvalContext, from: Vec3, to: Vec3, intensity: f64) -> LightingScript {
    let duration = ctx.plan.config.duration();
    LightingScript {
        fps: ctx.plan.config.fps,
        frame_count: ctx.plan.config.frame_count,
        tracks: vec![LightTrack {
            keyframes: vec![
                Keyframe {
                    t: 0.0,
                    light: PointLight {
                        position: from,
                        color: rgb(COLORS[1].1),
                        intensity,
                    },
                },
                Keyframe {
                    t: duration,
                    light: PointLight {
                        position: to,
                        color: rgb(COLORS[2].1),
                        intensity,
                    },
                },
            ],
        }],
    }
}

fn summarise(
    name: &str,
    ctx: &EvalContext,
    suite: &SuiteConfig,
    done: &[Evaluated],
    ladder: &[f64],
) -> EvalReport {
    let by = |suite: &str, scene: usize| -> Vec<&Evaluated> {
        done.iter()
            .filter(|e| e.prep.suite == suite && e.prep.scene == scene)
            .collect()
    };
    let all_pairs = done.iter().filter(|e| e.prep.suite == "pairs").count();
    let pair_records: Vec<&ExperimentRecord> = done
        .iter()
        .filter(|e| e.prep.suite == "pairs" && e.record.baseline_psnr.0.is_finite())
        .map(|e| &e.record)
        .collect();
    let pairs = (!pair_records.is_empty()).then(|| {
        let mean_psnr = mean_db(pair_records.iter().map(|r| r.psnr));
        let mean_baseline_psnr = mean_db(pair_records.iter().map(|r| r.baseline_psnr));
        PairSummary {
            pairs: pair_records.len(),
            unchanged: all_pairs - pair_records.len(),
            mean_psnr,
            mean_baseline_psnr,
            gain_db: mean_psnr.0 - mean_baseline_psnr.0,
        }
    });

    let mut intensity = Vec::new();
    let mut position = Vec::new();
    let mut depth = Vec::new();
    let mut temporal = Vec::new();
    for &s in ctx.held_out {
        let rungs = by("intensity", s);
        let lum: Vec<f64> = rungs.iter().map(|e| e.record.mean_luminance).collect();
        let olum: Vec<f64> = rungs.iter().map(|e| e.record.oracle_luminance).collect();
        intensity.push(LadderResult {
            scene: s,
            intensities: ladder.to_vec(),
            monotone: strictly_increasing(&lum),
            oracle_monotone: strictly_increasing(&olum),
            luminance: lum,
            oracle_luminance: olum,
        });

        let pos = by("position", s);
        let centroid = |e: &Evaluated, oracle: bool| {
            let v = if oracle {
                &e.prep.case.oracle
            } else {
                &e.generated
            };
            let all: Vec<usize> = (0..v.len()).collect();
            gain_centroid(v, &e.prep.case.source, &all).ok().flatten()
        };
        let centroids: Vec<_> = pos.iter().map(|e| centroid(e, false)).collect();
        let oracle_centroids: Vec<_> = pos.iter().map(|e| centroid(e, true)).collect();
        position.push(PositionResult {
            scene: s,
            pass: follows(&centroids, &oracle_centroids),
            oracle_ordered: ordered(&oracle_centroids),
            centroids,
            oracle_centroids,
        });

        let ds = by("depth", s);
        depth.push(DepthResult {
            scene: s,
            depths: suite.depths.clone(),
            luminance: ds.iter().map(|e| e.record.mean_luminance).collect(),
            oracle_luminance: ds.iter().map(|e| e.record.oracle_luminance).collect(),
            psnr: ds.iter().map(|e| e.record.psnr).collect(),
        });

        for e in by("temporal", s) {
            let n = e.generated.len();
            let early: Vec<usize> = (0..n.min(5)).collect();
            let late: Vec<usize> = (n.saturating_sub(5)..n).collect();
            let src = &e.prep.case.source;
            let first = gain_centroid(&e.generated, src, &early).ok().flatten();
            let last = gain_centroid(&e.generated, src, &late).ok().flatten();
            let hue_of = |frames: &[usize]| {
                let g = Video {
                    frames: frames
                        .iter()
                        .map(|&f| e.generated.frames[f].clone())
                        .collect(),
                    fps: src.fps,
                };
                let s = Video {
                    frames: frames.iter().map(|&f| src.frames[f].clone()).collect(),
                    fps: src.fps,
                };
                mean_delta(&g, &s).ok().and_then(hue_degrees)
            };
            let (h0, h1) = (hue_of(&early), hue_of(&late));
            let green = hue_degrees(COLORS[2].1).unwrap_or(120.0);
            temporal.push(TemporalResult {
                scene: s,
                psnr: e.record.psnr,
                moves_right: matches!((first, last), (Some(a), Some(b)) if b.0 > a.0),
                shifts_to_green: matches!((h0, h1), (Some(a), Some(b))
                    if angle_between(b, green) < angle_between(a, green)),
                centroid_first: first,
                centroid_last: last,
                hue_first: h0,
                hue_last: h1,
            });
        }
    }

    let mut color = Vec::new();
    for (cname, c) in COLORS {
        let tail = format!("/{cname}");
        let runs: Vec<&Evaluated> = done
            .iter()
            .filter(|e| e.prep.suite == "color" && e.prep.id.ends_with(&tail))
            .collect();
        let pooled = |f: &dyn Fn(&ExperimentRecord) -> [f64; 3]| {
            let mut acc = [0.0; 3];
            for e in &runs {
                let d = f(&e.record);
                for k in 0..3 {
                    acc[k] += d[k] / runs.len().max(1) as f64;
                }
            }
            acc
        };
        let response = hue_degrees(pooled(&|r| r.delta_rgb));
        let reference = match hue_degrees(c) {
            Some(h) => Some(h),
            None => hue_degrees(pooled(&|r| r.oracle_delta_rgb)),
        };
        let angle = match (response, reference) {
            (Some(a), Some(b)) => Some(angle_between(a, b)),
            _ => None,
        };
        color.push(ColorResult {
            color: cname.to_string(),
            light_rgb: c,
            reference_hue: reference,
            response_hue: response,
            pass: angle.is_some_and(|a| a <= suite.hue_tolerance),
            angle,
        });
    }

    EvalReport {
        relighter: name.to_string(),
        held_out_scenes: ctx.held_out.to_vec(),
        suite: suite.clone(),
        records: done.iter().map(|e| e.record.clone()).collect(),
        pairs,
        intensity_passes: intensity.iter().filter(|r| r.monotone).count(),
        intensity,
        color_passes: color.iter().filter(|r| r.pass).count(),
        color,
        position_passes: position.iter().filter(|r| r.pass).count(),
        position,
        depth,
        temporal,
    }
}

/// Centroids move right and down from top-left to bottom-right.
fn ordered(c: &[Option<(f64, f64)>]) -> bool {
    match c {
        [Some(a), Some(b), Some(d)] => a.0 < b.0 && b.0 < d.0 && a.1 < b.1 && b.1 < d.1,
        _ => false,
    }
}

/// Top-left to bottom-right displacement has the oracle's sign on each axis.
fn follows(c: &[Option<(f64, f64)>], oracle: &[Option<(f64, f64)>]) -> bool {
    match (c, oracle) {
        ([Some(a), _, Some(b)], [Some(oa), _, Some(ob)]) => {
            let same = |d: f64, od: f64| od != 0.0 && d.signum() == od.signum() && d != 0.0;
            same(b.0 - a.0, ob.0 - oa.0) && same(b.1 - a.1, ob.1 - oa.1)
        }
        _ => false,
    }
}

/// Latent group holding frame `f`.
fn group_of(f: usize) -> usize {
    f.div_ceil(4)
}

/// One PPM per experiment: key frames as rows of source, generated, oracle
/// and the MPLI of the frame's latent group.
pub fn write_sheets(done: &[Evaluated], dir: &Path) -> Result<()> {
    done.par_iter().try_for_each(|e| -> Result<()> {
        let c = &e.prep.case;
        let n = c.source.len();
        let mut idx = vec![0, n / 2, n.saturating_sub(1)];
        idx.dedup();
        let rows = idx
            .iter()
            .map(|&f| {
                let g = group_of(f).min(e.prep.mpli.mplis.len() - 1);
                let panels = vec![
                    c.source.frames[f].clone(),
                    e.generated.frames[f].clone(),
                    c.oracle.frames[f].clone(),
                    visualize_mpli(&e.prep.mpli.mplis[g])?,
                ];
                Image::hstack(&panels)
            })
            .collect::<Result<Vec<_>>>()?;
        let sheet = Image::vstack(&rows)?;
        let path = dir.join(format!("{}.ppm", e.prep.id.replace('/', "_")));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
        }
        sheet.write_ppm(&path)
    })?;
    Ok(())
}
