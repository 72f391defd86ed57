use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tubemosaic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubemosaic"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = tubemosaic(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, frames: usize) {
    ok(&["synth", "--out", s(dir), "--frames", &frames.to_string(), "--seed", "3"]);
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn split_stages_match_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (frames, unfolded, stitched, full) = (
        tmp.path().join("frames"),
        tmp.path().join("unfolded"),
        tmp.path().join("stitched"),
        tmp.path().join("full"),
    );
    synth(&frames, 6);
    let cfg = frames.join("config.json");
    ok(&["unfold", "--frames", s(&frames), "--out", s(&unfolded), "--config", s(&cfg)]);
    ok(&["stitch", "--unfolded", s(&unfolded), "--out", s(&stitched), "--config", s(&cfg)]);
    ok(&["full", "--frames", s(&frames), "--out", s(&full), "--config", s(&cfg)]);
    for name in ["panorama.png", "panorama.stitch.json", "dwho_report.json", "metrics.json"] {
        assert_eq!(
            fs::read(stitched.join(name)).unwrap(),
            fs::read(full.join(name)).unwrap(),
            "{name} differs"
        );
    }
    for prefix in ["unfolded", "annular", "annotated"] {
        assert!(unfolded.join(format!("{prefix}_000001.png")).exists());
    }
    assert_eq!(json(&unfolded.join("depthtrack.json"))["r_outer"].as_array().unwrap().len(), 6);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    synth(&frames, 5);
    let cfg = frames.join("config.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["full", "--frames", s(&frames), "--out", s(&a), "--config", s(&cfg)]);
    ok(&["full", "--frames", s(&frames), "--out", s(&b), "--config", s(&cfg)]);
    for name in [
        "panorama.png",
        "panorama.stitch.json",
        "dwho_report.json",
        "pool_report.json",
        "homographies.json",
        "provenance.json",
        "metrics.json",
    ] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn single_frame_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    synth(&frames, 1);
    let out = tubemosaic(&["full", "--frames", s(&frames), "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("need at least 2 frames"));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    synth(&frames, 3);
    let out = tmp.path().join("u");
    ok(&[
        "unfold",
        "--frames",
        s(&frames),
        "--out",
        s(&out),
        "--config",
        s(&frames.join("config.json")),
        "--epsilon",
        "9.5",
        "--providers",
        "orb",
        "--seed",
        "7",
    ]);
    let c = json(&out.join("config.json"));
    assert_eq!(c["epsilon"], 9.5);
    assert_eq!(c["providers"], serde_json::json!(["orb"]));
    assert_eq!(c["seed"], 7);
    assert_eq!(c["r_inner"], 64.0);
    assert_eq!(c["radial_mapping"], "perspective");

    let bad = tubemosaic(&["unfold", "--frames", s(&frames), "--out", s(&out), "--epsilon", "0"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("epsilon"));
}

#[test]
fn stitch_params_and_match_files_use_documented_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    synth(&frames, 3);
    let cfg = frames.join("config.json");
    let (unfolded, matches, out) = (tmp.path().join("u"), tmp.path().join("m"), tmp.path().join("o"));
    ok(&["unfold", "--frames", s(&frames), "--out", s(&unfolded), "--config", s(&cfg)]);
    ok(&["match", "--unfolded", s(&unfolded), "--out", s(&matches), "--config", s(&cfg)]);
    ok(&["stitch", "--unfolded", s(&unfolded), "--out", s(&out), "--config", s(&cfg)]);

    let params = json(&out.join("panorama.stitch.json"));
    let entries = params.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    for (k, e) in entries.iter().enumerate() {
        let obj = e.as_object().unwrap();
        assert_eq!(obj.len(), 3);
        assert_eq!(obj["frame"], k as u64 + 1);
        assert!(obj["dy"].is_f64() && obj["dx"].is_f64());
    }

    let text = fs::read_to_string(matches.join("orb_000001.matches.jsonl")).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["a", "b", "xa", "ya", "xb", "yb", "score", "provider"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    assert_eq!((first["a"].as_u64(), first["b"].as_u64()), (Some(1), Some(2)));
    assert!(matches.join("dog_000002.matches.jsonl").exists());
    assert!(out.join("pooled").join("pooled_000001.matches.jsonl").exists());
}

#[test]
fn eval_reproduces_pair_metrics_and_scores_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    synth(&frames, 4);
    let out = tmp.path().join("o");
    ok(&["full", "--frames", s(&frames), "--out", s(&out), "--config", s(&frames.join("config.json"))]);
    let metrics = tmp.path().join("eval.json");
    ok(&[
        "eval",
        "--pairs-from",
        s(&out.join("panorama.stitch.json")),
        "--unfolded",
        s(&out.join("unfolded")),
        "--panorama",
        s(&out.join("panorama.png")),
        "--reference",
        s(&frames.join("groundtruth_strip.png")),
        "--out",
        s(&metrics),
    ]);
    let e = json(&metrics);
    assert_eq!(e["pair_ssim"], json(&out.join("metrics.json"))["pair_ssim"]);
    assert!(e["rmse_reference"].as_f64().unwrap() < 15.0);
    assert!(e["ssim_reference"].as_f64().unwrap() > 0.8);

    let none = tubemosaic(&["eval", "--out", s(&metrics)]);
    assert!(!none.status.success());
}

#[test]
fn imported_matches_feed_the_pool() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    synth(&frames, 3);
    let cfg = frames.join("config.json");
    let (unfolded, matches, out) = (tmp.path().join("u"), tmp.path().join("m"), tmp.path().join("o"));
    ok(&["unfold", "--frames", s(&frames), "--out", s(&unfolded), "--config", s(&cfg)]);
    ok(&["match", "--unfolded", s(&unfolded), "--out", s(&matches), "--config", s(&cfg), "--providers", "dog"]);
    let providers = format!("orb,import:{}", s(&matches));
    ok(&[
        "stitch",
        "--unfolded",
        s(&unfolded),
        "--out",
        s(&out),
        "--config",
        s(&cfg),
        "--providers",
        &providers,
    ]);
    let pool = json(&out.join("pool_report.json"));
    let raw = &pool[0]["report"]["raw_per_provider"];
    assert!(raw["orb"].as_u64().unwrap() > 0);
    assert!(raw["dog"].as_u64().unwrap() > 0);
}
