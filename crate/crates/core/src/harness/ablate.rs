//! Ablation runners: multi-light generalisation, adapter initialisation,
//! single-plane MPLI and reduced training data.

use serde::{Deserialize, Serialize};

use super::data::TrainingSet;
use super::eval::{
    evaluate_all, evaluate_controllability, mean_db, EvalContext, EvalReport, ExperimentRecord,
    SuiteConfig,
};
use super::metrics::{angle_between, hue_degrees, mean_delta, Db};
use super::pipeline::{finetune_relight, ModelRelighter, PipelineConfig, Relighter, TrainOutcome};
use crate::dataset::Manifest;
use crate::dit::{AdapterInit, Dit};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::Video;
use crate::light::PointLight;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLightScene {
    pub scene: usize,
    pub two_light_psnr: Db,
    pub blue_only_psnr: Db,
    pub green_only_psnr: Db,
    /// Hue of the change on the half of the frame nearer each light.
    pub blue_side_hue: Option<f64>,
    pub green_side_hue: Option<f64>,
    /// Each side's change is closer in hue to its own light than to the other.
    pub sides_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLightReport {
    pub training_max_lights: usize,
    pub blue: PointLight,
    pub green: PointLight,
    pub scenes: Vec<MultiLightScene>,
    pub records: Vec<ExperimentRecord>,
    pub mean_two_light_psnr: Db,
    pub mean_single_light_psnr: Db,
    /// Single-light minus two-light mean PSNR.
    pub gap_db: f64,
}

/// Strong blue light on the left, weak green light on the right.
pub fn multilight_pair(anchor: Vec3) -> (PointLight, PointLight) {
    let blue = PointLight {
        position: Vec3::new(anchor.x - 1.2, anchor.y, anchor.z),
        color: Vec3::new(0.05, 0.05, 1.0),
        intensity: 5.0,
    };
    let green = PointLight {
        position: Vec3::new(anchor.x + 1.2, anchor.y, anchor.z),
        color: Vec3::new(0.05, 1.0, 0.05),
        intensity: 2.0,
    };
    (blue, green)
}

fn half_hue(generated: &Video, source: &Video, right: bool) -> Option<f64> {
    let w = source.width();
    let crop = |v: &Video| Video {
        frames: v
            .frames
            .iter()
            .map(|f| {
                let mut out = crate::image::Image::zeros(w / 2, f.height);
                for y in 0..f.height {
                    for x in 0..w / 2 {
                        let sx = if right { x + w - w / 2 } else { x };
                        out.set_pixel(x, y, f.pixel(sx, y));
                    }
                }
                out
            })
            .collect(),
        fps: v.fps,
    };
    mean_delta(&crop(generated), &crop(source))
        .ok()
        .and_then(hue_degrees)
}

/// Two-light relighting with a model trained on single-light pairs only.
/// Fails if the training manifest contains any multi-light pair.
pub fn ablate_multilight(
    relighter: &dyn Relighter,
    training: &Manifest,
    ctx: &EvalContext,
    suite: &SuiteConfig,
) -> Result<MultiLightReport> {
    let max = training.max_lights();
    if max != 1 {
        return Err(Error::Manifest(format!(
            "multi-light ablation needs single-light training data, manifest has up to {max} lights"
        )));
    }
    let (blue, green) = multilight_pair(suite.anchor);
    let mut preps = Vec::new();
    for &s in ctx.held_out {
        let keys = ctx.keys(s);
        for (name, lights) in [
            ("two", vec![blue, green]),
            ("blue", vec![blue]),
            ("green", vec![green]),
        ] {
            preps.push(ctx.prepare(
                format!("multilight/s{s:03}/{name}"),
                "multilight",
                s,
                keys,
                ctx.fixed_script(&lights),
                None,
            )?);
        }
    }
    let done = evaluate_all(relighter, preps)?;
    let blue_hue = hue_degrees(blue.color.to_array()).unwrap_or(240.0);
    let green_hue = hue_degrees(green.color.to_array()).unwrap_or(120.0);
    let mut scenes = Vec::new();
    for chunk in done.chunks(3) {
        let (two, b, g) = (&chunk[0], &chunk[1], &chunk[2]);
        let src = &two.prep.case.source;
        let left = half_hue(&two.generated, src, false);
        let right = half_hue(&two.generated, src, true);
        let closer = |h: Option<f64>, own: f64, other: f64| {
            h.is_some_and(|h| angle_between(h, own) < angle_between(h, other))
        };
        scenes.push(MultiLightScene {
            scene: two.prep.scene,
            two_light_psnr: two.record.psnr,
            blue_only_psnr: b.record.psnr,
            green_only_psnr: g.record.psnr,
            blue_side_hue: left,
            green_side_hue: right,
            sides_match: closer(left, blue_hue, green_hue) && closer(right, green_hue, blue_hue),
        });
    }
    let two = mean_db(scenes.iter().map(|s| s.two_light_psnr));
    let single = mean_db(
        scenes
            .iter()
            .flat_map(|s| [s.blue_only_psnr, s.green_only_psnr]),
    );
    Ok(MultiLightReport {
        training_max_lights: max,
        blue,
        green,
        scenes,
        records: done.into_iter().map(|e| e.record).collect(),
        mean_two_light_psnr: two,
        mean_single_light_psnr: single,
        gap_db: single.0 - two.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub steps: u64,
    pub training_pairs: usize,
    pub final_loss: f64,
    pub mean_psnr: Option<Db>,
    pub mean_baseline_psnr: Option<Db>,
    pub intensity_passes: usize,
    pub color_passes: usize,
    pub position_passes: usize,
    /// Adapter gains per block after training.
    pub gains: Vec<f64>,
}

pub fn summarize_variant(
    name: &str,
    outcome: &TrainOutcome,
    training_pairs: usize,
    report: &EvalReport,
) -> VariantSummary {
    let model = &outcome.state.model;
    VariantSummary {
        name: name.to_string(),
        steps: outcome.state.step,
        training_pairs,
        final_loss: outcome.final_loss(50),
        mean_psnr: report.pairs.as_ref().map(|p| p.mean_psnr),
        mean_baseline_psnr: report.pairs.as_ref().map(|p| p.mean_baseline_psnr),
        intensity_passes: report.intensity_passes,
        color_passes: report.color_passes,
        position_passes: report.position_passes,
        gains: (0..model.config.blocks)
            .filter_map(|b| model.params.get(&format!("blocks.{b}.gain")))
            .map(|m| m.data[0])
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitAblation {
    pub copy: VariantSummary,
    pub zero: VariantSummary,
    /// Copy-init reached a lower final loss and a higher held-out PSNR.
    pub copy_better: bool,
}

pub fn compare_init(copy: VariantSummary, zero: VariantSummary) -> InitAblation {
    let psnr_better = match (copy.mean_psnr, zero.mean_psnr) {
        (Some(a), Some(b)) => a.0 > b.0,
        _ => false,
    };
    InitAblation {
        copy_better: copy.final_loss < zero.final_loss && psnr_better,
        copy,
        zero,
    }
}

/// Finetunes one variant and evaluates it on the held-out suites.
pub fn run_variant(
    name: &str,
    base: &Dit,
    set: &TrainingSet,
    config: &PipelineConfig,
    mode: AdapterInit,
    ctx: &EvalContext,
    suite: &SuiteConfig,
    sheets: Option<&std::path::Path>,
    log: impl FnMut(u64, f64),
) -> Result<(TrainOutcome, EvalReport, VariantSummary)> {
    let outcome = finetune_relight(base, set, config, mode, config.seed, log)?;
    let relighter = ModelRelighter {
        model: &outcome.state.model,
        steps: config.sampler_steps,
        seed: config.seed,
    };
    let report = evaluate_controllability(&relighter, ctx, suite, sheets)?;
    let summary = summarize_variant(name, &outcome, set.len(), &report);
    Ok((outcome, report, summary))
}

/// Copy-init and zero-init finetuning at the same budget.
pub fn ablate_init(
    base: &Dit,
    set: &TrainingSet,
    config: &PipelineConfig,
    ctx: &EvalContext,
    suite: &SuiteConfig,
) -> Result<InitAblation> {
    let (_, _, copy) = run_variant(
        "copy",
        base,
        set,
        config,
        AdapterInit::Copy,
        ctx,
        suite,
        None,
        |_, _| {},
    )?;
    let (_, _, zero) = run_variant(
        "zero",
        base,
        set,
        config,
        AdapterInit::Zero,
        ctx,
        suite,
        None,
        |_, _| {},
    )?;
    Ok(compare_init(copy, zero))
}
