//! Full experiment driver: plan, split, train both stages, evaluate and
//! ablate, plus deterministic report files.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ablate::{
    ablate_multilight, compare_init, run_variant, InitAblation, MultiLightReport, VariantSummary,
};
use super::data::{held_out_scenes, scene_filter, TrainingSet};
use super::eval::{EvalContext, EvalReport, SuiteConfig};
use super::pipeline::{pretrain_base, ModelRelighter, PipelineConfig, TrainOutcome};
use crate::dataset::{plan_dataset, DatasetPlan};
use crate::dit::{AdapterInit, Dit};
use crate::error::{Error, Result};

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value).map_err(|e| Error::json("<config>", e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Wall-clock seconds per phase. Kept out of reports so those stay
/// byte-identical across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases
            .push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn total(&self) -> f64 {
        self.phases.iter().map(|(_, s)| s).sum()
    }
}

/// Dataset plan, held-out split and cached training tokens.
pub struct Experiment {
    pub config: PipelineConfig,
    pub plan: DatasetPlan,
    pub held_out: Vec<usize>,
    pub training: TrainingSet,
}

impl Experiment {
    pub fn new(config: PipelineConfig) -> Result<Experiment> {
        config.validate()?;
        let plan = plan_dataset(&config.dataset, config.dataset_seed)?;
        let held_out = held_out_scenes(config.dataset.scenes, config.held_out, config.seed);
        let training = TrainingSet::from_plan(
            &plan,
            scene_filter(&held_out),
            &config.depths,
            config.scalers,
            &config.model,
        )?;
        Ok(Experiment {
            config,
            plan,
            held_out,
            training,
        })
    }

    pub fn context(&self) -> EvalContext<'_> {
        EvalContext {
            plan: &self.plan,
            held_out: &self.held_out,
            depths: &self.config.depths,
            scalers: self.config.scalers,
            model: &self.config.model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub first: f64,
    pub last: f64,
    /// Mean loss over consecutive windows of `window` steps.
    pub window: usize,
    pub means: Vec<f64>,
}

impl LossCurve {
    pub fn of(losses: &[f64], window: usize) -> LossCurve {
        let window = window.max(1);
        LossCurve {
            first: losses.first().copied().unwrap_or(f64::NAN),
            last: losses.last().copied().unwrap_or(f64::NAN),
            window,
            means: losses
                .chunks(window)
                .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                .collect(),
        }
    }
}

/// Everything produced by one full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub config: PipelineConfig,
    pub suite: SuiteConfig,
    pub held_out: Vec<usize>,
    pub training_pairs: usize,
    pub pretrain_loss: LossCurve,
    pub finetune_loss: LossCurve,
    pub eval: EvalReport,
    pub multilight: MultiLightReport,
    pub init: InitAblation,
}

pub struct RunOutput {
    pub report: RunReport,
    pub base: TrainOutcome,
    pub relight: TrainOutcome,
    pub timings: Timings,
}

/// Pretrains, finetunes with copy-init and zero-init, then runs the
/// controllability suites and the multi-light ablation on the copy-init
/// model.
pub fn run_all(
    exp: &Experiment,
    suite: &SuiteConfig,
    sheets: Option<&Path>,
    mut log: impl FnMut(&str, u64, f64),
) -> Result<RunOutput> {
    let cfg = &exp.config;
    let ctx = exp.context();
    let mut timings = Timings::default();
    let base = timings.time("pretrain", || {
        pretrain_base(&exp.training, cfg, cfg.seed, |s, l| log("pretrain", s, l))
    })?;
    let (relight, eval, copy) = timings.time("finetune_copy", || {
        run_variant(
            "copy",
            &base.state.model,
            &exp.training,
            cfg,
            AdapterInit::Copy,
            &ctx,
            suite,
            sheets,
            |s, l| log("finetune_copy", s, l),
        )
    })?;
    let multilight = timings.time("multilight", || {
        let relighter = ModelRelighter {
            model: &relight.state.model,
            steps: cfg.sampler_steps,
            seed: cfg.seed,
        };
        ablate_multilight(&relighter, &exp.plan.manifest(), &ctx, suite)
    })?;
    let (_, _, zero) = timings.time("finetune_zero", || {
        run_variant(
            "zero",
            &base.state.model,
            &exp.training,
            cfg,
            AdapterInit::Zero,
            &ctx,
            suite,
            None,
            |s, l| log("finetune_zero", s, l),
        )
    })?;
    let report = RunReport {
        config_hash: config_hash(&(cfg, suite))?,
        config: cfg.clone(),
        suite: suite.clone(),
        held_out: exp.held_out.clone(),
        training_pairs: exp.training.len(),
        pretrain_loss: LossCurve::of(&base.losses, 100),
        finetune_loss: LossCurve::of(&relight.losses, 100),
        eval,
        multilight,
        init: compare_init(copy, zero),
    };
    Ok(RunOutput {
        report,
        base,
        relight,
        timings,
    })
}

/// Side-by-side summaries of finetuning variants at equal budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub ablation: String,
    pub config_hash: String,
    pub variants: Vec<VariantSummary>,
}

/// Four-plane versus single-plane (depth 3) light input.
pub fn ablate_planes(
    base: &Dit,
    exp: &Experiment,
    suite: &SuiteConfig,
) -> Result<VariantComparison> {
    let cfg = &exp.config;
    let (_, _, four) = run_variant(
        "k4",
        base,
        &exp.training,
        cfg,
        AdapterInit::Copy,
        &exp.context(),
        suite,
        None,
        |_, _| {},
    )?;
    let depths = [SINGLE_PLANE_DEPTH];
    let single = exp.training.with_depths(&exp.plan, &depths, cfg.scalers)?;
    let ctx = EvalContext {
        depths: &depths,
        ..exp.context()
    };
    let k1_config = PipelineConfig {
        depths: depths.to_vec(),
        ..cfg.clone()
    };
    let (_, _, one) = run_variant(
        "k1",
        base,
        &single,
        &k1_config,
        AdapterInit::Copy,
        &ctx,
        suite,
        None,
        |_, _| {},
    )?;
    Ok(VariantComparison {
        ablation: "k1".into(),
        config_hash: config_hash(&(cfg, suite))?,
        variants: vec![four, one],
    })
}

/// Depth of the single plane in the one-plane ablation.
pub const SINGLE_PLANE_DEPTH: f64 = 3.0;

/// Finetuning on all training pairs versus a seeded `fraction` of them.
pub fn ablate_data_fraction(
    base: &Dit,
    exp: &Experiment,
    suite: &SuiteConfig,
    fraction: f64,
) -> Result<VariantComparison> {
    let cfg = &exp.config;
    let ctx = exp.context();
    let full_config = PipelineConfig {
        data_fraction: 1.0,
        ..cfg.clone()
    };
    let part_config = PipelineConfig {
        data_fraction: fraction,
        ..cfg.clone()
    };
    let (_, _, full) = run_variant(
        "full",
        base,
        &exp.training,
        &full_config,
        AdapterInit::Copy,
        &ctx,
        suite,
        None,
        |_, _| {},
    )?;
    let (_, _, mut part) = run_variant(
        "subset",
        base,
        &exp.training,
        &part_config,
        AdapterInit::Copy,
        &ctx,
        suite,
        None,
        |_, _| {},
    )?;
    part.training_pairs = exp.training.subset(fraction, cfg.seed).len();
    Ok(VariantComparison {
        ablation: "third-data".into(),
        config_hash: config_hash(&(&part_config, suite))?,
        variants: vec![full, part],
    })
}
