use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relightkit::rltk;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_relightkit"));
    c.env_remove("RELIGHTKIT_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_script(dir: &Path, frame_count: usize) -> PathBuf {
    let script = serde_json::json!({
        "fps": 8.0,
        "frame_count": frame_count,
        "tracks": [{
            "keyframes": [
                {"t": 0.0, "position": [-1.0, -0.5, 2.0], "color": [1.0, 0.2, 0.1], "intensity": 4.0},
                {"t": 1.0, "position": [1.0, 0.5, 2.0], "color": [0.1, 0.2, 1.0], "intensity": 4.0}
            ]
        }]
    });
    let p = dir.join(format!("script_{frame_count}.json"));
    std::fs::write(&p, serde_json::to_vec_pretty(&script).unwrap()).unwrap();
    p
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn inspect_reports_written_shape() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.rltk");
    let shape = [2, 3, 5];
    let data: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
    rltk::write_f64(&file, &shape, &data).unwrap();
    let out = run(&["inspect", path(&file)]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("shape [2, 3, 5]"), "{text}");
    assert!(text.contains("dtype f32"), "{text}");

    let missing = run(&["inspect", path(&dir.path().join("nope.rltk"))]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.rltk"), b"RLTX....").unwrap();
    let bad = run(&["inspect", path(&dir.path().join("bad.rltk"))]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn render_mpli_rejects_invalid_frame_count() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), 16);
    let out = run(&["render-mpli", path(&script), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("frame_count mod 4 != 1"), "{err}");
}

#[test]
fn render_and_visualise_mpli_idempotently() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), 9);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "render-mpli",
            path(&script),
            "--width",
            "16",
            "--height",
            "12",
            "--focal",
            "16",
            "--out",
            path(out),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let bytes = std::fs::read(a.join("mpli.rltk")).unwrap();
    assert_eq!(bytes, std::fs::read(b.join("mpli.rltk")).unwrap());
    let t = rltk::read(&a.join("mpli.rltk")).unwrap();
    assert_eq!(t.shape, vec![3, 4, 12, 16, 3]);

    let viz = run(&["viz-mpli", path(&a.join("mpli.rltk")), "--out", path(&a)]);
    assert_eq!(viz.status.code(), Some(0));
    let ppm = std::fs::read(a.join("mpli.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n64 36\n255\n"));
}

#[test]
fn oracle_relight_reproduces_target() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), 9);
    // A smooth target and a different source, both 16x16 with 9 frames.
    let (f, h, w) = (9, 16, 16);
    let video = |phase: f64| -> Vec<f64> {
        (0..f * h * w * 3)
            .map(|i| 0.5 + 0.45 * ((i as f64) * 0.37 + phase).sin())
            .collect()
    };
    let (src, tgt) = (
        dir.path().join("source.rltk"),
        dir.path().join("target.rltk"),
    );
    rltk::write_f64(&src, &[f, h, w, 3], &video(0.0)).unwrap();
    rltk::write_f64(&tgt, &[f, h, w, 3], &video(1.3)).unwrap();
    let out_dir = dir.path().join("out");
    let o = run(&[
        "relight",
        path(&src),
        path(&script),
        "--oracle-target",
        path(&tgt),
        "--steps",
        "1",
        "--seed",
        "11",
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let relit = rltk::read(&out_dir.join("relit.rltk")).unwrap();
    let target = rltk::read(&tgt).unwrap();
    assert_eq!(relit.shape, target.shape);
    let same = relit
        .data
        .iter()
        .zip(&target.data)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same);
}

#[test]
fn relight_needs_a_model_or_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let script = write_script(dir.path(), 9);
    let o = run(&["relight", "x.rltk", path(&script)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_env_must_be_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.rltk");
    rltk::write_f64(&file, &[1], &[0.0]).unwrap();
    let o = bin()
        .args(["inspect", path(&file)])
        .env("RELIGHTKIT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin()
        .args(["inspect", path(&file), "--threads", "1"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"seed": 3, "sampler_steps": 2}"#).unwrap();
    let common = |seed: Option<u64>| relightkit_cli::args::Common {
        seed,
        config: Some(cfg.clone()),
        out: dir.path().to_path_buf(),
        threads: None,
    };
    let from_file = relightkit_cli::commands::load_config(&common(None)).unwrap();
    assert_eq!((from_file.seed, from_file.sampler_steps), (3, 2));
    assert_eq!(from_file.finetune_steps, 5000);
    let flagged = relightkit_cli::commands::load_config(&common(Some(8))).unwrap();
    assert_eq!(flagged.seed, 8);
}

#[test]
fn gen_dataset_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(
        &cfg,
        r#"{"dataset": {"scenes": 2, "trajectories_per_scene": 1, "width": 16, "height": 16,
            "frame_count": 5, "fps": 8.0, "focal_px": 16.0}}"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "gen-dataset",
            "--config",
            path(&cfg),
            "--seed",
            "4",
            "--out",
            path(out),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for file in [
        "manifest.json",
        "pairs/00000/source.rltk",
        "pairs/00005/target.rltk",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}
