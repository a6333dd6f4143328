use std::path::Path;
use std::process::{Command, Output};

use fringe_core::io::{read_tensor, KeyValues};
use fringe_core::metrics::MetricReport;
use fringe_core::synth::{generate_pair, NoiseSpec, TargetMode};
use fringe_core::Tensor;

fn fringe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fringe"))
        .args(args)
        .env("FRINGE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fringe(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(path: &Path) -> KeyValues {
    KeyValues::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn noiseless_generate_matches_the_image_model() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--count", "1", "--size", "32", "--noise", "none", "--seed", "4", "--out", s(dir.path())]);
    let x: Tensor<f64> = read_tensor(dir.path().join("scene_000.x.fpt")).unwrap();
    let g = generate_pair(4, 0, 32, &NoiseSpec::none(), TargetMode::Cosine).unwrap();
    let s = &g.scene;
    let expected: Vec<f64> = (0..32 * 32)
        .map(|i| s.background.data()[i] + s.contrast.data()[i] * s.phase.data()[i].cos())
        .collect();
    assert_eq!(x.data(), expected.as_slice());
    let m = manifest(&dir.path().join("scenes.manifest"));
    assert_eq!(m.get("command"), Some("generate"));
    assert_eq!(m.get("scene.000"), Some("train"));
}

#[test]
fn generate_rerun_is_bitwise_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&["generate", "--count", "2", "--size", "32", "--noise", "gaussian_speckle:0.2+pupil:0.8", "--out", s(d.path())]);
    }
    for f in ["scene_000.x.fpt", "scene_001.y.fpt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn bad_flags_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    for args in [
        vec!["generate", "--noise", "fog", "--out", s(&out_dir)],
        vec!["generate", "--count", "0", "--out", s(&out_dir)],
        vec!["generate", "--count", "2", "--train", "3", "--out", s(&out_dir)],
        vec!["generate", "--preset", "huge", "--out", s(&out_dir)],
    ] {
        let out = fringe(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out_dir.exists(), "{args:?} created output");
    }
    let out = fringe(&["generate", "--sizee", "3"]);
    assert!(!out.status.success());
}

#[test]
fn train_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "epochs=3\nlearning_rate=1\n").unwrap();
    let out = fringe(&["train", "--config", s(&cfg), "--dataset", "x.fpds", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn full_pipeline_small() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scenes = d.join("scenes");
    ok(&["generate", "--count", "3", "--train", "2", "--size", "64", "--seed", "9", "--out", s(&scenes)]);
    let data = d.join("data.fpds");
    ok(&["sample", "--scenes", s(&scenes), "--patches", "40", "--patch", "16", "--validation", "8", "--seed", "2", "--out", s(&data)]);
    assert_eq!(manifest(&data.with_extension("manifest")).get("flag.patches"), Some("40"));

    let run = d.join("run");
    let log = ok(&[
        "train", "--dataset", s(&data), "--variant", "resvnet", "--K", "2", "--F", "2", "--epochs", "2", "--batch", "8",
        "--lr", "1e-3", "--seed", "3", "--out", s(&run),
    ]);
    assert_eq!(log.lines().count(), 3, "{log}");
    assert!(log.lines().nth(1).unwrap().starts_with("1\t"));
    assert!(run.join("best.vnck").exists() && run.join("best.model").exists());
    let tm = manifest(&run.join("train.manifest"));
    assert_eq!(tm.get("steps"), Some("8"));

    // resuming continues the step counter
    let run2 = d.join("run2");
    ok(&["train", "--dataset", s(&data), "--K", "2", "--F", "2", "--variant", "resvnet", "--epochs", "1", "--batch", "8",
        "--resume", s(&run.join("last.vnck")), "--out", s(&run2)]);
    assert_eq!(manifest(&run2.join("train.manifest")).get("steps"), Some("12"));

    let recon = d.join("recon.fpt");
    let msg = ok(&[
        "reconstruct", "--checkpoint", s(&run.join("best.vnck")), "--input", s(&scenes.join("scene_002.x.fpt")),
        "--stride", "8", "--output", s(&recon), "--pgm", s(&d.join("recon.pgm")),
    ]);
    assert!(msg.starts_with("49 patch inferences"), "{msg}");
    let r: Tensor<f64> = read_tensor(&recon).unwrap();
    assert_eq!(r.dims(), &[1, 64, 64]);
    assert_eq!(manifest(&recon.with_extension("manifest")).get("invocations"), Some("49"));

    let report = d.join("report");
    let best = format!("resvnet={}", s(&run.join("best.vnck")));
    let tsv = ok(&["eval", "--scenes", s(&scenes), "--model", &best, "--stride", "8", "--out", s(&report)]);
    assert!(tsv.contains("x (input)\t") && tsv.contains("resvnet\t"));
    let kv = std::fs::read_to_string(report.with_extension("kv")).unwrap();
    let parsed = MetricReport::parse_key_values(&kv).unwrap();
    assert_eq!(parsed.rows.len(), 2);
    assert_eq!(parsed.scenes, vec!["scene_002".to_string()]);

    let baseline = ok(&["eval", "--scenes", s(&scenes), "--out", s(&d.join("base"))]);
    assert_eq!(baseline.lines().filter(|l| !l.starts_with('#')).count(), 2);

    let bad = fringe(&["eval", "--scenes", s(&scenes), "--model", "noequals", "--out", s(&d.join("x"))]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn pipeline_rerun_is_bitwise_identical() {
    let run = |d: &Path| -> (Vec<u8>, Vec<u8>) {
        let scenes = d.join("scenes");
        ok(&["generate", "--count", "2", "--train", "1", "--size", "32", "--seed", "5", "--out", s(&scenes)]);
        let data = d.join("data.fpds");
        ok(&["sample", "--scenes", s(&scenes), "--patches", "20", "--patch", "8", "--validation", "4", "--out", s(&data)]);
        ok(&["train", "--dataset", s(&data), "--K", "1", "--F", "2", "--epochs", "2", "--batch", "4", "--out", s(&d.join("run"))]);
        let recon = d.join("r.fpt");
        ok(&["reconstruct", "--checkpoint", s(&d.join("run/best.vnck")), "--input", s(&scenes.join("scene_001.x.fpt")),
            "--stride", "4", "--output", s(&recon)]);
        (std::fs::read(d.join("run/last.vnck")).unwrap(), std::fs::read(recon).unwrap())
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}
