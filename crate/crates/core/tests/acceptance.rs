//! Acceptance suite. Runs as a plain binary and prints one PASS/FAIL line
//! per criterion; exits non-zero if any criterion fails.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use relightkit::codec::{decode, decode_video, encode, encode_video, pad_frames, unpad_frames};
use relightkit::dataset::{plan_dataset, Batch, DatasetConfig, VaryingParam};
use relightkit::dit::train::example_gradients;
use relightkit::dit::{
    euler_from, flow_loss, gaussian_noise, make_xt, target_velocity, AdapterInit, ConstantVelocity,
    Dit, DitConfig, FlowExample, Mat,
};
use relightkit::geometry::Vec3;
use relightkit::harness::data::{mpli_sequence, sequence_tokens};
use relightkit::harness::run::{run_all, write_json, Experiment, RunOutput};
use relightkit::harness::{PipelineConfig, SuiteConfig};
use relightkit::image::Image;
use relightkit::light::{CameraIntrinsics, LightTrack, LightingScript, PointLight};
use relightkit::mpli::{build_mpli, render_light_image, MpliScalers, DEFAULT_DEPTHS};
use relightkit::rng;
use relightkit::scene::CameraKey;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || {
        format!(
            "took {:.2}s, limit {:.0}s",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        )
    })
}

/// Runs one criterion and prints its line. Returns whether it passed.
fn criterion(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let mut result = f();
    let elapsed = start.elapsed();
    if let (Ok(_), Some(limit)) = (&result, limit) {
        if let Err(e) = within(elapsed, limit) {
            result = Err(e);
        }
    }
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    // Written straight to stderr so the line shows without --nocapture.
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n} [{name}]: {tag} ({:.2}s) {detail}",
        elapsed.as_secs_f64()
    );
    result.is_ok()
}

// ---------------------------------------------------------------- 1

/// Pixel whose centre ray is the optical axis, so its plane point at depth
/// `d` is `(0, 0, d)`.
fn axis_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        principal: Some((0.5, 0.5)),
        ..CameraIntrinsics::new(10.0, 1, 1).unwrap()
    }
}

fn point_values() -> Check {
    let scalers = MpliScalers::new(1.0, 1.0).map_err(|e| e.to_string())?;
    let depth = 4.0;
    let white = PointLight::white(Vec3::new(0.0, 0.0, depth - 3.0), 10.0);
    let img =
        render_light_image(&[white], depth, &axis_camera(), scalers).map_err(|e| e.to_string())?;
    let px = img.image.pixel(0, 0);
    for c in px {
        ensure((c - 1.0).abs() <= 1e-6, || {
            format!("distance 3 gave {px:?}, want 1.0")
        })?;
    }
    // Same distance along an oblique direction.
    let oblique = PointLight::white(Vec3::new(2.0, -1.0, depth + 2.0), 10.0);
    let px = render_light_image(&[oblique], depth, &axis_camera(), scalers)
        .map_err(|e| e.to_string())?
        .image
        .pixel(0, 0);
    for c in px {
        ensure((c - 1.0).abs() <= 1e-6, || {
            format!("oblique distance 3 gave {px:?}")
        })?;
    }
    let color = [0.3, 0.8, 0.05];
    let at = PointLight {
        position: Vec3::new(0.0, 0.0, depth),
        color: Vec3::new(color[0], color[1], color[2]),
        intensity: 10.0,
    };
    for s2 in [1.0, 0.25] {
        let scalers = MpliScalers::new(1.0, s2).map_err(|e| e.to_string())?;
        let px = render_light_image(&[at], depth, &axis_camera(), scalers)
            .map_err(|e| e.to_string())?
            .image
            .pixel(0, 0);
        for k in 0..3 {
            let want = 10.0 * color[k] / s2;
            ensure((px[k] - want).abs() <= 1e-6 * want.max(1.0), || {
                format!("zero distance with s2={s2}: got {px:?}, want I*c/s2")
            })?;
        }
    }
    Ok("distance 3 -> 1.0 per channel; zero distance -> I*c/s2".into())
}

// ---------------------------------------------------------------- 2

fn random_light(rng: &mut ChaCha8Rng) -> PointLight {
    PointLight {
        position: Vec3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-2.0..8.0),
        ),
        color: Vec3::new(
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
        ),
        intensity: rng.random_range(0.1..10.0),
    }
}

/// Plane point of pixel `(u, v)` computed from the pinhole model directly.
fn plane_point(intr: &CameraIntrinsics, u: usize, v: usize, d: f64) -> [f64; 3] {
    let cx = intr.width as f64 / 2.0;
    let cy = intr.height as f64 / 2.0;
    [
        (u as f64 + 0.5 - cx) / intr.focal_px * d,
        (v as f64 + 0.5 - cy) / intr.focal_px * d,
        d,
    ]
}

fn dist2(a: [f64; 3], b: Vec3) -> f64 {
    (a[0] - b.x).powi(2) + (a[1] - b.y).powi(2) + (a[2] - b.z).powi(2)
}

fn mpli_properties() -> Check {
    let mut rng = rng::stream(2024, &[2]);
    let (mut worst_add, mut worst_ratio, mut pairs) = (0.0f64, 0.0f64, 0usize);
    for case in 0..10_000 {
        let w = rng.random_range(3..10);
        let h = rng.random_range(3..10);
        let intr = CameraIntrinsics::new(rng.random_range(4.0..20.0), w, h).unwrap();
        let scalers =
            MpliScalers::new(rng.random_range(0.2..3.0), rng.random_range(0.05..2.0)).unwrap();
        let depth = rng.random_range(0.3..7.0);
        let n = rng.random_range(1..4);
        let lights: Vec<PointLight> = (0..n).map(|_| random_light(&mut rng)).collect();
        let render =
            |ls: &[PointLight]| render_light_image(ls, depth, &intr, scalers).map(|l| l.image);
        let all = render(&lights).map_err(|e| e.to_string())?;

        // superposition
        let mut sum = Image::zeros(w, h);
        for l in &lights {
            let one = render(std::slice::from_ref(l)).map_err(|e| e.to_string())?;
            for (s, v) in sum.data.iter_mut().zip(&one.data) {
                *s += v;
            }
        }
        for (a, b) in all.data.iter().zip(&sum.data) {
            worst_add = worst_add.max((a - b).abs());
        }

        // intensity linearity under dyadic scaling is exact in floating point
        let k = [0.5, 2.0, 4.0, 8.0][case % 4];
        let scaled: Vec<PointLight> = lights
            .iter()
            .map(|l| PointLight {
                intensity: l.intensity * k,
                ..*l
            })
            .collect();
        let s = render(&scaled).map_err(|e| e.to_string())?;
        for (a, b) in s.data.iter().zip(&all.data) {
            ensure(*a == k * b, || {
                format!("case {case}: scaling by {k} gave {a}, want {}", k * b)
            })?;
        }

        // single light: channel ratios follow the light color; value falls
        // with distance
        let l = lights[0];
        let one = render(&[l]).map_err(|e| e.to_string())?;
        let c = l.color.to_array();
        for u in 0..w {
            for v in 0..h {
                let px = one.pixel(u, v);
                for ch in 1..3 {
                    let got = px[ch] / px[0];
                    let want = c[ch] / c[0];
                    worst_ratio = worst_ratio.max((got - want).abs() / want);
                }
            }
        }
        for _ in 0..8 {
            let (u1, v1) = (rng.random_range(0..w), rng.random_range(0..h));
            let (u2, v2) = (rng.random_range(0..w), rng.random_range(0..h));
            let r1 = dist2(plane_point(&intr, u1, v1, depth), l.position);
            let r2 = dist2(plane_point(&intr, u2, v2, depth), l.position);
            if r1 == r2 {
                continue;
            }
            let (near, far) = if r1 < r2 {
                ((u1, v1), (u2, v2))
            } else {
                ((u2, v2), (u1, v1))
            };
            let a = one.channel_sum(near.0, near.1);
            let b = one.channel_sum(far.0, far.1);
            ensure(a >= b, || {
                format!("case {case}: nearer pixel {near:?} darker than {far:?}")
            })?;
            pairs += 1;
        }
    }
    ensure(worst_add <= 1e-6, || {
        format!("superposition error {worst_add:e}")
    })?;
    ensure(worst_ratio <= 1e-6, || {
        format!("channel ratio error {worst_ratio:e}")
    })?;

    // co-located halves equal one full light, bit for bit
    let intr = CameraIntrinsics::new(24.0, 16, 12).unwrap();
    let full = PointLight::white(Vec3::new(0.4, -0.3, 2.2), 6.0);
    let half = PointLight {
        intensity: 3.0,
        ..full
    };
    let depths = [0.5, 1.5, 3.0, 6.0];
    let a =
        build_mpli(&[full], &depths, &intr, MpliScalers::default()).map_err(|e| e.to_string())?;
    let b = build_mpli(&[half, half], &depths, &intr, MpliScalers::default())
        .map_err(|e| e.to_string())?;
    ensure(a == b, || {
        "two co-located I/2 lights differ from one light of intensity I".into()
    })?;

    Ok(format!(
        "10000 cases: superposition {worst_add:.1e}, ratio {worst_ratio:.1e}, {pairs} radial pairs ordered, dyadic scaling exact"
    ))
}

// ---------------------------------------------------------------- 3

fn codec_round_trip() -> Check {
    let mut rng = rng::stream(3, &[3]);
    for i in 0..100 {
        let n = if i == 0 { 1 } else { rng.random_range(1..5) };
        let frames = 4 * n + 1;
        let w = 4 * rng.random_range(1..5);
        let h = 4 * rng.random_range(1..5);
        let video: Vec<Image> = (0..frames)
            .map(|_| Image {
                width: w,
                height: h,
                data: (0..w * h * 3).map(|_| rng.random::<f64>()).collect(),
            })
            .collect();
        let latent = encode(&pad_frames(&video).map_err(|e| e.to_string())?, 4)
            .map_err(|e| e.to_string())?;
        ensure(latent.shape() == [n + 1, 192, h / 4, w / 4], || {
            format!("video {i}: latent shape {:?}", latent.shape())
        })?;
        let back =
            unpad_frames(decode(&latent).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let again = decode_video(&encode_video(&video, 4).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        for out in [&back, &again] {
            let same = out.len() == video.len()
                && out.iter().zip(&video).all(|(a, b)| {
                    a.data.len() == b.data.len()
                        && a.data
                            .iter()
                            .zip(&b.data)
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                });
            ensure(same, || {
                format!("video {i} ({frames} frames, {w}x{h}) did not round-trip")
            })?;
        }
    }
    Ok("100 videos bit-identical, including a 5-frame clip".into())
}

// ---------------------------------------------------------------- 4

fn tiny_config() -> DitConfig {
    DitConfig {
        width: 8,
        blocks: 2,
        heads: 2,
        patch: 2,
        mlp_ratio: 2,
        lora_rank: 2,
        lora_alpha: 2.0,
        adapter_init: AdapterInit::Copy,
        groups: 2,
        latent_channels: 3,
        latent_height: 4,
        latent_width: 4,
        time_freqs: 3,
    }
}

fn wave(rows: usize, cols: usize, phase: f64) -> Mat {
    let data = (0..rows * cols)
        .map(|i| (i as f64 * 0.37 + phase).sin() * 0.8)
        .collect();
    Mat::from_vec(rows, cols, data).unwrap()
}

fn jitter(mut model: Dit, seed: u64) -> Dit {
    let mut rng = rng::stream(seed, &[4]);
    for m in model.params.values_mut() {
        for x in m.data.iter_mut() {
            *x += 0.3 * (rng.random::<f64>() - 0.5);
        }
    }
    model
}

fn flow_math() -> Check {
    let (rows, cols) = (180, 768);
    let x0 = gaussian_noise(rows, cols, 40, &[1]);
    let eps = gaussian_noise(rows, cols, 40, &[2]);
    let u = target_velocity(&x0, &eps).map_err(|e| e.to_string())?;
    let zero = flow_loss(&u, &x0, &eps).map_err(|e| e.to_string())?;
    ensure(zero == 0.0, || format!("loss at v = eps - x0 is {zero}"))?;

    let field = ConstantVelocity::new(&x0, &eps).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for steps in [1, 4, 16, 50] {
        let out = euler_from(&field, eps.clone(), steps).map_err(|e| e.to_string())?;
        let err = out
            .data
            .iter()
            .zip(&x0.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(err <= 1e-5, || format!("{steps} steps: max error {err:e}"))?;
        worst = worst.max(err);
    }

    // Central differences against reverse mode on a small relight model with
    // every tensor unfrozen.
    let base = jitter(
        Dit::init_base(tiny_config(), 3).map_err(|e| e.to_string())?,
        1,
    );
    let mut model = jitter(
        base.to_relight(AdapterInit::Copy, 4)
            .map_err(|e| e.to_string())?,
        8,
    );
    model.trainable = model.params.keys().cloned().collect();
    let c = model.config.clone();
    let (s, p) = (c.tokens(), c.patch_dim());
    let ex = FlowExample {
        source: wave(s, p, 0.9),
        target: wave(s, p, 1.4),
        light: Some(wave(s, p, 2.6)),
    };
    let noise = gaussian_noise(s, p, 5, &[]);
    let t = 0.6;
    let loss_of = |m: &Dit| -> f64 {
        let xt = make_xt(&ex.target, &noise, t).unwrap();
        let v = m.velocity(&xt, &ex.source, ex.light.as_ref(), t).unwrap();
        flow_loss(&v, &ex.target, &noise).unwrap()
    };
    let (_, grads) = example_gradients(&model, &ex, &noise, t).map_err(|e| e.to_string())?;
    let mut rng = rng::stream(11, &[4]);
    let names: Vec<String> = model.params.keys().cloned().collect();
    let (mut probed, mut worst_rel) = (0, 0.0f64);
    for name in &names {
        let len = model.params[name].len();
        for _ in 0..2 {
            let i = rng.random_range(0..len);
            let h = 1e-3;
            let mut plus = model.clone();
            plus.params.get_mut(name).unwrap().data[i] += h;
            let mut minus = model.clone();
            minus.params.get_mut(name).unwrap().data[i] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let analytic = grads[name].data[i];
            let scale = analytic.abs().max(numeric.abs());
            // Relative error is meaningless for a gradient that is zero.
            if scale < 1e-7 {
                continue;
            }
            let rel = (analytic - numeric).abs() / scale;
            ensure(rel < 1e-4, || {
                format!("{name}[{i}]: analytic {analytic}, numeric {numeric}")
            })?;
            worst_rel = worst_rel.max(rel);
            probed += 1;
        }
    }
    ensure(probed >= 10, || format!("only {probed} parameters probed"))?;
    Ok(format!(
        "zero loss at target velocity; Euler error {worst:.1e}; {probed} gradients within {worst_rel:.1e} relative"
    ))
}

// ---------------------------------------------------------------- 5

fn static_keys(frames: usize, fps: f64) -> Vec<CameraKey> {
    (0..frames)
        .map(|f| CameraKey {
            t: f as f64 / fps,
            position: Vec3::new(0.0, 0.0, 0.0),
            look_at: Vec3::new(0.0, 0.0, 1.0),
        })
        .collect()
}

fn light_input(cfg: &DitConfig, light: PointLight) -> Result<Mat, String> {
    let data = DatasetConfig::default();
    let script = LightingScript {
        fps: data.fps,
        frame_count: data.frame_count,
        tracks: vec![LightTrack::constant(light)],
    };
    let intr = data.intrinsics().map_err(|e| e.to_string())?;
    let seq = mpli_sequence(
        &script,
        &static_keys(data.frame_count, data.fps),
        &intr,
        &DEFAULT_DEPTHS,
        MpliScalers::default(),
    )
    .map_err(|e| e.to_string())?;
    sequence_tokens(&seq, cfg).map_err(|e| e.to_string())
}

fn adapter_init_contracts() -> Check {
    let cfg = DitConfig::default();
    let base = jitter(
        Dit::init_base(cfg.clone(), 21).map_err(|e| e.to_string())?,
        22,
    );
    let a = light_input(&cfg, PointLight::white(Vec3::new(-1.0, -0.5, 2.0), 5.0))?;
    let b = light_input(
        &cfg,
        PointLight {
            position: Vec3::new(1.2, 0.4, 4.0),
            color: Vec3::new(0.05, 0.05, 1.0),
            intensity: 3.0,
        },
    )?;
    ensure(a.data != b.data, || "the two MPLIs are identical".into())?;
    let (s, p) = (cfg.tokens(), cfg.patch_dim());
    let source = gaussian_noise(s, p, 23, &[1]);
    let xt = gaussian_noise(s, p, 23, &[2]);

    let zero = base
        .to_relight(AdapterInit::Zero, 24)
        .map_err(|e| e.to_string())?;
    let copy = base
        .to_relight(AdapterInit::Copy, 24)
        .map_err(|e| e.to_string())?;
    for bl in 0..cfg.blocks {
        let g = copy.params[&format!("blocks.{bl}.gain")].data[0];
        ensure(g == 0.0, || format!("copy-init gain of block {bl} is {g}"))?;
    }
    for t in [0.25, 0.5, 1.0] {
        let za = zero
            .velocity(&xt, &source, Some(&a), t)
            .map_err(|e| e.to_string())?;
        let zb = zero
            .velocity(&xt, &source, Some(&b), t)
            .map_err(|e| e.to_string())?;
        ensure(za.data == zb.data, || {
            format!("zero-init output depends on the MPLI at t={t}")
        })?;
        let want = base
            .velocity(&xt, &source, None, t)
            .map_err(|e| e.to_string())?;
        for light in [&a, &b] {
            let got = copy
                .velocity(&xt, &source, Some(light), t)
                .map_err(|e| e.to_string())?;
            ensure(got.data == want.data, || {
                format!("copy-init output differs from the base at t={t}")
            })?;
        }
    }
    Ok("zero-init ignores the MPLI; copy-init equals the base model bit for bit".into())
}

// ---------------------------------------------------------------- 9

/// Independent reading of the batch rules: sample the light at every frame
/// and see which parameter groups move.
fn batch_oracle(
    script: &LightingScript,
    batch: Batch,
    varying: Option<VaryingParam>,
) -> Result<(), String> {
    if script.tracks.len() != 1 {
        return Err(format!("{} lights", script.tracks.len()));
    }
    let lights: Vec<PointLight> = (0..script.frame_count)
        .map(|f| script.lights_at(script.frame_time(f)).map(|v| v[0]))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let first = lights[0];
    let (mut xy, mut z, mut color, mut intensity) = (false, false, false, false);
    for l in &lights {
        xy |= l.position.x != first.position.x || l.position.y != first.position.y;
        z |= l.position.z != first.position.z;
        color |= l.color != first.color;
        intensity |= l.intensity != first.intensity;
    }
    let moved = [xy, z, color, intensity].iter().filter(|&&m| m).count();
    match batch {
        Batch::FixedBehindCamera => {
            ensure(moved == 0, || "fixed light moves".into())?;
            ensure(first.position.z < 0.0, || {
                "light is not behind the first camera".into()
            })
        }
        Batch::FixedRandom => ensure(moved == 0, || "fixed light moves".into()),
        Batch::TimeVarying => {
            ensure(moved == 1, || format!("{moved} parameter groups vary"))?;
            let which = match (xy, z, color) {
                (true, _, _) => VaryingParam::Position2d,
                (_, true, _) => VaryingParam::Depth,
                (_, _, true) => VaryingParam::Color,
                _ => VaryingParam::Intensity,
            };
            ensure(varying == Some(which), || {
                format!("manifest says {varying:?}, script varies {which:?}")
            })
        }
    }
}

fn dataset_protocol() -> Check {
    let config = DatasetConfig::full_scale();
    ensure(config.pair_count() == 7824, || {
        format!("pair_count {}", config.pair_count())
    })?;
    let plan = plan_dataset(&config, 0).map_err(|e| e.to_string())?;
    let manifest = plan.manifest();
    ensure(
        plan.pairs.len() == 652 * 4 * 3 && manifest.pairs.len() == 7824,
        || format!("plan has {} pairs", plan.pairs.len()),
    )?;
    let mut rng = rng::stream(9, &[9]);
    for batch in Batch::ALL {
        let members: Vec<_> = plan.pairs.iter().filter(|p| p.batch == batch).collect();
        ensure(members.len() == 652 * 4, || {
            format!("{batch:?} has {} pairs", members.len())
        })?;
        for _ in 0..100 {
            let p = members[rng.random_range(0..members.len())];
            relightkit::dataset::check_batch_rule(&p.script, batch)
                .map_err(|e| format!("pair {}: {e}", p.id))?;
            batch_oracle(&p.script, batch, p.varying)
                .map_err(|e| format!("pair {} ({batch:?}): {e}", p.id))?;
        }
    }
    Ok("7824 = 652 x 4 x 3 planned pairs; 100 scripts per batch conform".into())
}

// ---------------------------------------------------------------- 6, 7, 8

/// Steps and wall-clock allowed for the desk-scale run.
const MAX_STEPS: u64 = 5000;
const MAX_RUN: Duration = Duration::from_secs(60 * 60);

fn desk_run() -> Result<(RunOutput, Duration), String> {
    let config = PipelineConfig::default();
    let start = Instant::now();
    let exp = Experiment::new(config).map_err(|e| e.to_string())?;
    let prep = start.elapsed();
    let out = run_all(&exp, &SuiteConfig::default(), None, |stage, step, loss| {
        if step % 500 == 0 {
            let _ = writeln!(std::io::stderr(), "  {stage} step {step} loss {loss:.5}");
        }
    })
    .map_err(|e| e.to_string())?;
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    write_json(&dir.join("report.json"), &out.report).map_err(|e| e.to_string())?;
    write_json(&dir.join("timings.json"), &out.timings).map_err(|e| e.to_string())?;
    // The desk pipeline is data prep, pretraining, the copy-init finetune and
    // its evaluation. The later ablation phases are timed but not budgeted.
    let desk: f64 = out
        .timings
        .phases
        .iter()
        .filter(|(name, _)| name == "pretrain" || name == "finetune_copy")
        .map(|(_, s)| s)
        .sum();
    Ok((out, prep + Duration::from_secs_f64(desk)))
}

fn desk_scale(run: &RunOutput, elapsed: Duration) -> Check {
    let r = &run.report;
    let c = &r.config;
    ensure(
        c.dataset.width == 48 && c.dataset.height == 48 && c.dataset.frame_count == 17,
        || "clip size is not 48x48x17".into(),
    )?;
    ensure(
        c.dataset.pair_count() == 720 && c.dataset.scenes == 60,
        || {
            format!(
                "{} scenes / {} pairs",
                c.dataset.scenes,
                c.dataset.pair_count()
            )
        },
    )?;
    ensure(
        c.pretrain_steps <= MAX_STEPS && c.finetune_steps <= MAX_STEPS,
        || "step budget exceeded".into(),
    )?;
    // Scene-level split: training holds every pair of every other scene.
    let per_scene = c.dataset.trajectories_per_scene * 3;
    ensure(
        r.eval.held_out_scenes == r.held_out && !r.held_out.is_empty(),
        || "evaluation scenes differ from the held-out split".into(),
    )?;
    ensure(
        r.training_pairs + r.held_out.len() * per_scene == c.dataset.pair_count(),
        || {
            format!(
                "{} training pairs with {} held-out scenes",
                r.training_pairs,
                r.held_out.len()
            )
        },
    )?;
    within(elapsed, MAX_RUN)?;
    let pairs = r.eval.pairs.as_ref().ok_or("no held-out pair records")?;
    let summary = format!(
        "held-out PSNR {:.2} dB vs copy baseline {:.2} dB (gain {:+.2} dB over {} pairs); intensity {}/{}; color {}/4",
        pairs.mean_psnr.0,
        pairs.mean_baseline_psnr.0,
        pairs.gain_db,
        pairs.pairs,
        r.eval.intensity_passes,
        r.eval.intensity.len(),
        r.eval.color_passes
    );
    ensure(pairs.gain_db >= 2.0, || summary.clone())?;
    ensure(r.eval.intensity_passes >= 4, || summary.clone())?;
    ensure(r.eval.color_passes >= 3, || summary.clone())?;
    Ok(summary)
}

fn multilight(run: &RunOutput) -> Check {
    let m = &run.report.multilight;
    ensure(m.training_max_lights == 1, || {
        format!("training data has {} lights", m.training_max_lights)
    })?;
    ensure(
        !m.scenes.is_empty() && m.records.len() == 3 * m.scenes.len(),
        || "incomplete two-light evaluation".into(),
    )?;
    ensure(
        m.scenes.iter().all(|s| s.two_light_psnr.0.is_finite()),
        || "non-finite two-light PSNR".into(),
    )?;
    // exact superposition identity, as in criterion 2
    let intr = CameraIntrinsics::new(48.0, 48, 48).unwrap();
    let one = build_mpli(
        &[PointLight {
            intensity: 4.0,
            ..m.blue
        }],
        &[0.5, 1.5, 3.0, 6.0],
        &intr,
        MpliScalers::default(),
    )
    .map_err(|e| e.to_string())?;
    let half = PointLight {
        intensity: 2.0,
        ..m.blue
    };
    let two = build_mpli(
        &[half, half],
        &[0.5, 1.5, 3.0, 6.0],
        &intr,
        MpliScalers::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(one == two, || "superposition identity failed".into())?;
    let sides = m.scenes.iter().filter(|s| s.sides_match).count();
    Ok(format!(
        "two-light PSNR {:.2} dB, single-light {:.2} dB, gap {:.2} dB; per-side hue matches in {}/{} scenes",
        m.mean_two_light_psnr.0,
        m.mean_single_light_psnr.0,
        m.gap_db,
        sides,
        m.scenes.len()
    ))
}

fn init_ablation(run: &RunOutput) -> Check {
    let init = &run.report.init;
    ensure(init.copy.steps == init.zero.steps, || {
        "unequal budgets".into()
    })?;
    ensure(
        init.copy.final_loss.is_finite() && init.zero.final_loss.is_finite(),
        || "non-finite loss".into(),
    )?;
    ensure(
        init.copy.mean_psnr.is_some() && init.zero.mean_psnr.is_some(),
        || "missing PSNR".into(),
    )?;

    // Determinism: the same ablation twice at a short budget gives
    // byte-identical reports.
    let config = PipelineConfig {
        pretrain_steps: 3,
        finetune_steps: 3,
        dataset: DatasetConfig {
            scenes: 7,
            trajectories_per_scene: 1,
            ..DatasetConfig::default()
        },
        ..PipelineConfig::default()
    };
    let exp = Experiment::new(config).map_err(|e| e.to_string())?;
    let once = || -> Result<Vec<u8>, String> {
        let out = run_all(&exp, &SuiteConfig::default(), None, |_, _, _| {})
            .map_err(|e| e.to_string())?;
        serde_json::to_vec(&out.report.init).map_err(|e| e.to_string())
    };
    let (a, b) = (once()?, once()?);
    ensure(a == b, || {
        "init ablation report differs between identical runs".into()
    })?;
    let fmt = |v: &relightkit::harness::ablate::VariantSummary| {
        format!(
            "loss {:.5}, PSNR {:.2} dB, flags i{} c{} p{}",
            v.final_loss,
            v.mean_psnr.map_or(f64::NAN, |d| d.0),
            v.intensity_passes,
            v.color_passes,
            v.position_passes
        )
    };
    Ok(format!(
        "copy [{}] vs zero [{}]; copy-init better: {} (observation); report deterministic",
        fmt(&init.copy),
        fmt(&init.zero),
        init.copy_better
    ))
}

fn main() {
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= criterion(1, "light image point values", Some(secs(1)), point_values);
    ok &= criterion(2, "MPLI properties", Some(secs(30)), mpli_properties);
    ok &= criterion(3, "codec round trip", Some(secs(10)), codec_round_trip);
    ok &= criterion(4, "flow matching math", Some(secs(60)), flow_math);
    ok &= criterion(
        5,
        "adapter init contracts",
        Some(secs(60)),
        adapter_init_contracts,
    );
    ok &= criterion(9, "dataset protocol", Some(secs(10)), dataset_protocol);

    let _ = writeln!(
        std::io::stderr(),
        "desk-scale run (pretrain, two finetunes, evaluation)..."
    );
    match desk_run() {
        Ok((run, elapsed)) => {
            ok &= criterion(6, "desk-scale end to end", None, || {
                desk_scale(&run, elapsed)
            });
            ok &= criterion(7, "multi-light generalization", None, || multilight(&run));
            ok &= criterion(8, "init ablation", None, || init_ablation(&run));
        }
        Err(e) => {
            for (n, name) in [
                (6, "desk-scale end to end"),
                (7, "multi-light generalization"),
                (8, "init ablation"),
            ] {
                ok &= criterion(n, name, None, || Err(format!("run failed: {e}")));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
