use std::path::{Path, PathBuf};

use relightkit::codec::{encode_video, DEFAULT_SPATIAL};
use relightkit::dataset::{generate_dataset, read_json, read_video, write_video, Manifest};
use relightkit::dit::{
    checkpoint, euler_from, gaussian_noise, latent_to_tokens, AdapterInit, ConstantVelocity,
    DitConfig, SAMPLER_STREAM,
};
use relightkit::harness::ablate::{ablate_init, ablate_multilight};
use relightkit::harness::data::{light_tokens, scene_filter, tokens_video, TrainingSet};
use relightkit::harness::run::LossCurve;
use relightkit::harness::{
    ablate_data_fraction, ablate_planes, config_hash, evaluate_controllability, finetune_relight,
    pretrain_base, write_json, CopySource, Experiment, ModelRelighter, OracleReplay,
    PipelineConfig, Relighter, SuiteConfig, Timings,
};
use relightkit::image::{Image, Video};
use relightkit::light::{CameraIntrinsics, CameraPose, LightingScript};
use relightkit::mpli::{build_mpli_sequence, visualize_mpli, MultiPlaneLightImage};
use relightkit::rltk;
use relightkit::scene::{poses, CameraKey};
use serde::Serialize;

use crate::args::{AblationArg, CameraArgs, Command, Common, InitArg, StubArg};
use crate::error::{CliError, CliResult};

/// Fraction of training pairs in the reduced-data ablation.
const THIRD: f64 = 1.0 / 3.0;

pub fn load_config(common: &Common) -> CliResult<PipelineConfig> {
    let mut config: PipelineConfig = match &common.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn dispatch(common: &Common, command: Command) -> CliResult<()> {
    let mut config = load_config(common)?;
    let out = common.out.as_path();
    match command {
        Command::GenDataset {
            scenes,
            trajectories,
        } => {
            if let Some(n) = scenes {
                config.dataset.scenes = n;
            }
            if let Some(n) = trajectories {
                config.dataset.trajectories_per_scene = n;
            }
            let seed = common.seed.unwrap_or(config.dataset_seed);
            let manifest = generate_dataset(&config.dataset, seed, out)?;
            println!("wrote {} pairs to {}", manifest.pairs.len(), out.display());
        }
        Command::RenderMpli {
            script,
            trajectory,
            camera,
        } => render_mpli(&config, &script, trajectory.as_deref(), &camera, out)?,
        Command::VizMpli { mpli } => viz_mpli(&mpli, out)?,
        Command::Pretrain { dataset, steps } => {
            if let Some(s) = steps {
                config.pretrain_steps = s;
            }
            config.validate()?;
            let set = training_set(&config, dataset.as_deref())?;
            let mut timings = Timings::default();
            let outcome = timings.time("pretrain", || {
                pretrain_base(&set, &config, config.seed, progress("pretrain"))
            })?;
            checkpoint::save(&outcome.state, &out.join("base"))?;
            write_json(
                &out.join("pretrain_loss.json"),
                &LossCurve::of(&outcome.losses, 100),
            )?;
            write_json(&out.join("timings.json"), &timings)?;
            println!("base checkpoint: {}", out.join("base").display());
        }
        Command::Finetune {
            base,
            dataset,
            steps,
            init,
            data_fraction,
        } => {
            if let Some(s) = steps {
                config.finetune_steps = s;
            }
            if let Some(f) = data_fraction {
                config.data_fraction = f;
            }
            config.validate()?;
            let base = checkpoint::load(&base)?;
            let set = training_set(&config, dataset.as_deref())?;
            let mut timings = Timings::default();
            let outcome = timings.time("finetune", || {
                finetune_relight(
                    &base.model,
                    &set,
                    &config,
                    adapter_init(init),
                    config.seed,
                    progress("finetune"),
                )
            })?;
            checkpoint::save(&outcome.state, &out.join("relight"))?;
            write_json(
                &out.join("finetune_loss.json"),
                &LossCurve::of(&outcome.losses, 100),
            )?;
            write_json(&out.join("timings.json"), &timings)?;
            println!("relight checkpoint: {}", out.join("relight").display());
        }
        Command::Relight {
            source,
            script,
            checkpoint,
            oracle_target,
            trajectory,
            steps,
            camera,
        } => {
            let steps = steps.unwrap_or(config.sampler_steps);
            let script: LightingScript = read_json(&script)?;
            script.ensure_valid()?;
            let source = read_video(&source, script.fps)?;
            let relit = match (checkpoint, oracle_target) {
                (_, Some(target)) => {
                    let target = read_video(&target, script.fps)?;
                    oracle_relight(&target, steps, config.seed)?
                }
                (Some(dir), None) => {
                    let state = checkpoint::load(&dir)?;
                    let cfg = &state.model.config;
                    let intrinsics = intrinsics(&config, &camera, Some(&source))?;
                    let keys = trajectory_keys(trajectory.as_deref(), &script)?;
                    let depths = camera.depths.clone().unwrap_or(config.depths.clone());
                    let light =
                        light_tokens(&script, &keys, &intrinsics, &depths, config.scalers, cfg)?;
                    relightkit::harness::relight_video(
                        &state.model,
                        &source,
                        &light,
                        steps,
                        config.seed,
                    )?
                }
                (None, None) => {
                    return Err(CliError::Usage(
                        "relight needs --checkpoint or --oracle-target".into(),
                    ))
                }
            };
            create_dir(out)?;
            write_video(&out.join("relit.rltk"), &relit)?;
            println!("wrote {}", out.join("relit.rltk").display());
        }
        Command::Eval {
            checkpoint,
            stub,
            sheets,
            steps,
        } => {
            if let Some(s) = steps {
                config.sampler_steps = s;
            }
            let suite = SuiteConfig::default();
            let exp = eval_only(&config)?;
            let ctx = exp.context();
            let state = checkpoint.as_deref().map(checkpoint::load).transpose()?;
            let model_relighter;
            let relighter: &dyn Relighter = match (stub, &state) {
                (Some(StubArg::Oracle), _) => &OracleReplay,
                (Some(StubArg::Copy), _) => &CopySource,
                (None, Some(state)) => {
                    model_relighter = ModelRelighter {
                        model: &state.model,
                        steps: config.sampler_steps,
                        seed: config.seed,
                    };
                    &model_relighter
                }
                (None, None) => {
                    return Err(CliError::Usage("eval needs --checkpoint or --stub".into()))
                }
            };
            let sheet_dir = out.join("sheets");
            let mut timings = Timings::default();
            let report = timings.time("eval", || {
                evaluate_controllability(
                    relighter,
                    &ctx,
                    &suite,
                    sheets.then_some(sheet_dir.as_path()),
                )
            })?;
            write_report(out, "eval.json", &config, &report)?;
            write_json(&out.join("timings.json"), &timings)?;
            if let Some(p) = &report.pairs {
                println!(
                    "held-out PSNR {:.2} dB (copy baseline {:.2} dB)",
                    p.mean_psnr.0, p.mean_baseline_psnr.0
                );
            }
            println!(
                "intensity {}/{} color {}/4 position {}/{}",
                report.intensity_passes,
                report.intensity.len(),
                report.color_passes,
                report.position_passes,
                report.position.len()
            );
        }
        Command::Ablate {
            which,
            base,
            checkpoint,
            dataset,
            steps,
        } => {
            if let Some(s) = steps {
                config.finetune_steps = s;
            }
            ablate(&config, which, base, checkpoint, dataset, out)?;
        }
        Command::Inspect { file } => {
            let t = rltk::read(&file)?;
            let n: usize = t.shape.iter().product();
            println!("shape {:?}", t.shape);
            println!("dtype f32");
            println!("elements {n}");
            if n > 0 {
                let (lo, hi) = t
                    .data
                    .iter()
                    .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                let mean = t.data.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                println!("min {lo} max {hi} mean {mean}");
            }
        }
    }
    Ok(())
}

fn ablate(
    config: &PipelineConfig,
    which: AblationArg,
    base: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    out: &Path,
) -> CliResult<()> {
    let suite = SuiteConfig::default();
    let need = |p: Option<PathBuf>, flag: &str| {
        p.ok_or_else(|| CliError::Usage(format!("this ablation needs --{flag}")))
    };
    match which {
        AblationArg::Multilight => {
            let state = checkpoint::load(&need(checkpoint, "checkpoint")?)?;
            let exp = eval_only(config)?;
            let manifest = match dataset {
                Some(dir) => Manifest::read(&dir)?,
                None => exp.plan.manifest(),
            };
            let relighter = ModelRelighter {
                model: &state.model,
                steps: config.sampler_steps,
                seed: config.seed,
            };
            let report = ablate_multilight(&relighter, &manifest, &exp.context(), &suite)?;
            println!(
                "two-light PSNR {:.2} dB, single-light {:.2} dB, gap {:.2} dB",
                report.mean_two_light_psnr.0, report.mean_single_light_psnr.0, report.gap_db
            );
            write_report(out, "multilight.json", config, &report)?;
        }
        AblationArg::Init => {
            let base = checkpoint::load(&need(base, "base")?)?;
            let exp = Experiment::new(config.clone())?;
            let report = ablate_init(&base.model, &exp.training, config, &exp.context(), &suite)?;
            println!(
                "final loss copy {:.5} zero {:.5}; copy-init better: {}",
                report.copy.final_loss, report.zero.final_loss, report.copy_better
            );
            write_report(out, "init.json", config, &report)?;
        }
        AblationArg::K1 => {
            let base = checkpoint::load(&need(base, "base")?)?;
            let exp = Experiment::new(config.clone())?;
            let report = ablate_planes(&base.model, &exp, &suite)?;
            write_report(out, "k1.json", config, &report)?;
        }
        AblationArg::ThirdData => {
            let base = checkpoint::load(&need(base, "base")?)?;
            let exp = Experiment::new(config.clone())?;
            let report = ablate_data_fraction(&base.model, &exp, &suite, THIRD)?;
            write_report(out, "third_data.json", config, &report)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: String,
    seed: u64,
    dataset_seed: u64,
    report: &'a T,
}

fn write_report<T: Serialize>(
    out: &Path,
    name: &str,
    config: &PipelineConfig,
    report: &T,
) -> CliResult<()> {
    let env = Envelope {
        config_hash: config_hash(config)?,
        seed: config.seed,
        dataset_seed: config.dataset_seed,
        report,
    };
    write_json(&out.join(name), &env)?;
    println!("report: {}", out.join(name).display());
    Ok(())
}

fn progress(stage: &'static str) -> impl FnMut(u64, f64) {
    move |step, loss| {
        if step % 100 == 0 {
            eprintln!("{stage} step {step} loss {loss:.6}");
        }
    }
}

fn adapter_init(init: InitArg) -> AdapterInit {
    match init {
        InitArg::Copy => AdapterInit::Copy,
        InitArg::Zero => AdapterInit::Zero,
    }
}

/// Training pairs outside the held-out scenes, from disk or rendered from
/// the configured plan.
fn training_set(config: &PipelineConfig, dataset: Option<&Path>) -> CliResult<TrainingSet> {
    match dataset {
        Some(dir) => {
            let manifest = Manifest::read(dir)?;
            let held = relightkit::harness::held_out_scenes(
                manifest.config.scenes,
                config.held_out,
                config.seed,
            );
            Ok(TrainingSet::from_dir(
                dir,
                scene_filter(&held),
                &config.depths,
                config.scalers,
                &config.model,
            )?)
        }
        None => Ok(Experiment::new(config.clone())?.training),
    }
}

/// Plan and split without rendering the training pairs.
fn eval_only(config: &PipelineConfig) -> CliResult<Experiment> {
    config.validate()?;
    let plan = relightkit::dataset::plan_dataset(&config.dataset, config.dataset_seed)?;
    let held_out =
        relightkit::harness::held_out_scenes(config.dataset.scenes, config.held_out, config.seed);
    Ok(Experiment {
        training: TrainingSet {
            config: config.model.clone(),
            pairs: Vec::new(),
        },
        config: config.clone(),
        plan,
        held_out,
    })
}

fn intrinsics(
    config: &PipelineConfig,
    camera: &CameraArgs,
    video: Option<&Video>,
) -> CliResult<CameraIntrinsics> {
    let width = camera
        .width
        .or(video.map(Video::width))
        .unwrap_or(config.dataset.width);
    let height = camera
        .height
        .or(video.map(Video::height))
        .unwrap_or(config.dataset.height);
    let focal = camera
        .focal
        .unwrap_or(config.dataset.focal_px * width as f64 / config.dataset.width as f64);
    Ok(CameraIntrinsics::new(focal, width, height)?)
}

/// Camera keys from `trajectory.json`, or a static camera at the origin
/// looking down +z.
fn trajectory_keys(path: Option<&Path>, script: &LightingScript) -> CliResult<Vec<CameraKey>> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => Ok((0..script.frame_count)
            .map(|f| CameraKey {
                t: script.frame_time(f),
                position: relightkit::geometry::Vec3::new(0.0, 0.0, 0.0),
                look_at: relightkit::geometry::Vec3::new(0.0, 0.0, 1.0),
            })
            .collect()),
    }
}

fn render_mpli(
    config: &PipelineConfig,
    script_path: &Path,
    trajectory: Option<&Path>,
    camera: &CameraArgs,
    out: &Path,
) -> CliResult<()> {
    let script: LightingScript = read_json(script_path)?;
    script.ensure_valid()?;
    let keys = trajectory_keys(trajectory, &script)?;
    let poses: Vec<CameraPose> = poses(&keys)?;
    let intrinsics = intrinsics(config, camera, None)?;
    let depths = camera.depths.clone().unwrap_or(config.depths.clone());
    let seq = build_mpli_sequence(&script, &poses, &intrinsics, &depths, config.scalers)?;
    let first = &seq.mplis[0];
    let shape = [
        seq.mplis.len(),
        first.plane_count(),
        first.height(),
        first.width(),
        3,
    ];
    let data: Vec<f64> = seq.mplis.iter().flat_map(|m| m.flat()).collect();
    create_dir(out)?;
    rltk::write_f64(&out.join("mpli.rltk"), &shape, &data)?;
    println!(
        "wrote {} with shape {shape:?}",
        out.join("mpli.rltk").display()
    );
    Ok(())
}

/// One row per latent group, planes side by side in stored order.
fn viz_mpli(path: &Path, out: &Path) -> CliResult<()> {
    let t = rltk::read(path)?;
    let shape: [usize; 5] = match t.shape.as_slice() {
        &[k, h, w, 3] => [1, k, h, w, 3],
        &[g, k, h, w, 3] => [g, k, h, w, 3],
        other => {
            return Err(CliError::Usage(format!(
                "expected an MPLI tensor [K, H, W, 3] or [G, K, H, W, 3], got {other:?}"
            )))
        }
    };
    let [g, k, h, w, _] = shape;
    let data = t.to_f64();
    let per = k * h * w * 3;
    let depths: Vec<f64> = (1..=k).map(|d| d as f64).collect();
    let rows = (0..g)
        .map(|i| {
            let m = MultiPlaneLightImage::from_flat(
                [k, h, w, 3],
                &depths,
                &data[i * per..(i + 1) * per],
            )?;
            visualize_mpli(&m)
        })
        .collect::<relightkit::Result<Vec<_>>>()?;
    let sheet = Image::vstack(&rows)?;
    let dest = out.join("mpli.ppm");
    create_dir(out)?;
    sheet.write_ppm(&dest)?;
    println!("wrote {}", dest.display());
    Ok(())
}

/// Euler integration of the constant field that points from the target
/// latent to the sampler noise. Any step count lands on the target.
fn oracle_relight(target: &Video, steps: usize, seed: u64) -> CliResult<Video> {
    let latent = encode_video(&target.frames, DEFAULT_SPATIAL)?;
    let mut cfg = DitConfig::for_latent(latent.shape());
    if latent.height % cfg.patch != 0 || latent.width % cfg.patch != 0 {
        cfg.patch = 1;
    }
    let x0 = latent_to_tokens(&latent.data, &cfg)?;
    let eps = gaussian_noise(x0.rows, x0.cols, seed, &[SAMPLER_STREAM]);
    let field = ConstantVelocity::new(&x0, &eps)?;
    if steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let tokens = euler_from(&field, eps, steps)?;
    Ok(tokens_video(&tokens, &cfg, target.len(), target.fps)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| relightkit::Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}
