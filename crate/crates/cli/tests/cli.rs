use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gifstream_core::{quantize_gop, read_model};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gifstream"))
        .args(args)
        .env("GIFSTREAM_THREADS", "1")
        .output()
        .expect("spawn gifstream")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> serde_json::Map<String, Value> {
    let mut a = args.to_vec();
    a.push("--json");
    match serde_json::from_str(&ok(&a)).unwrap() {
        Value::Object(m) => m,
        other => panic!("not an object: {other}"),
    }
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = p(dir, name);
    let mut args = vec!["synth", "--out", s(&out), "--anchors", "200", "--frames", "6"];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn synth_defaults_give_five_gaussians() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "m.gifu");
    let r = json(&["synth", "--out", s(&out)]);
    assert_eq!(r["gaussians_per_anchor"], 5);
    let m = read_model(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(m.config.gaussians_per_anchor, 5);
    assert_eq!(m.config.stream_channels, 4);
    assert_eq!(m.config.feature_channels, 24);
}

#[test]
fn synth_sparsity_and_frames() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "m.gifu");
    let r = json(&["synth", "--out", s(&out), "--anchors", "1000", "--sparsity", "0.3", "--frames", "65"]);
    let present = r["present_streams"].as_u64().unwrap();
    assert!((250..=350).contains(&present), "{present}");
    assert_eq!(read_model(&fs::read(&out).unwrap()).unwrap().config.frames, 65);
}

#[test]
fn invalid_flags_are_usage_errors_and_write_nothing() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "m.gifu");
    for bad in [
        vec!["synth", "--out", s(&out), "--sparsity", "1.5"],
        vec!["synth", "--out", s(&out), "--frames", "0"],
        vec!["synth", "--out", s(&out), "--anchors", "ten"],
        vec!["synth"],
    ] {
        assert_eq!(run(&bad).status.code(), Some(1), "{bad:?}");
    }
    assert!(!out.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn encode_decode_roundtrip_and_determinism() {
    let dir = TempDir::new().unwrap();
    let m = synth(&dir, "m.gifu", &[]);
    let (a, b, d) = (p(&dir, "a.gifs"), p(&dir, "b.gifs"), p(&dir, "d.gifu"));
    let r = json(&["encode", "--in", s(&m), "--out", s(&a), "--seed", "3"]);
    let ratio = r["estimate_ratio"].as_f64().unwrap();
    assert!((0.98..=1.02).contains(&ratio), "{ratio}");
    ok(&["encode", "--in", s(&m), "--out", s(&b), "--seed", "3"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let r = json(&["decode", "--in", s(&a), "--out", s(&d)]);
    assert!(r["prediction_seconds"].as_f64().is_some());
    assert!(r["entropy_seconds"].as_f64().is_some());
    let original = read_model(&fs::read(&m).unwrap()).unwrap();
    let decoded = read_model(&fs::read(&d).unwrap()).unwrap();
    assert_eq!(decoded, quantize_gop(&original, 3).unwrap());
}

#[test]
fn default_synth_encodes_within_two_percent_of_estimate() {
    let dir = TempDir::new().unwrap();
    let m = p(&dir, "m.gifu");
    ok(&["synth", "--out", s(&m)]);
    let r = json(&["encode", "--in", s(&m), "--out", s(&p(&dir, "s.gifs"))]);
    let ratio = r["estimate_ratio"].as_f64().unwrap();
    assert!((0.98..=1.02).contains(&ratio), "{ratio}");
}

#[test]
fn decode_prints_both_phases() {
    let dir = TempDir::new().unwrap();
    let m = synth(&dir, "m.gifu", &[]);
    let g = p(&dir, "s.gifs");
    ok(&["encode", "--in", s(&m), "--out", s(&g)]);
    let text = ok(&["decode", "--in", s(&g), "--out", s(&p(&dir, "d.gifu"))]);
    assert!(text.contains("distribution prediction:"), "{text}");
    assert!(text.contains("entropy decoding:"), "{text}");
}

#[test]
fn data_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let m = synth(&dir, "m.gifu", &[]);
    let g = p(&dir, "s.gifs");
    ok(&["encode", "--in", s(&m), "--out", s(&g)]);
    let mut bytes = fs::read(&g).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let bad = p(&dir, "bad.gifs");
    fs::write(&bad, &bytes).unwrap();
    let out = p(&dir, "d.gifu");
    assert_eq!(run(&["decode", "--in", s(&bad), "--out", s(&out)]).status.code(), Some(2));
    assert!(!out.exists());
    let missing = p(&dir, "missing.gifu");
    assert_eq!(
        run(&["encode", "--in", s(&missing), "--out", s(&p(&dir, "x.gifs"))]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["stats", "--in", s(&m)]).status.code(), Some(2));
}

#[test]
fn expand_vertex_count_and_range() {
    let dir = TempDir::new().unwrap();
    let m = synth(&dir, "m.gifu", &["--gaussians", "3"]);
    let g = p(&dir, "s.gifs");
    ok(&["encode", "--in", s(&m), "--out", s(&g)]);
    for input in [&m, &g] {
        let ply = p(&dir, "f.ply");
        let r = json(&["expand", "--in", s(input), "--time-index", "5", "--out", s(&ply)]);
        assert_eq!(r["vertices"], 600);
        let bytes = fs::read(&ply).unwrap();
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(text.contains("element vertex 600\n"), "{text}");
    }
    let ply = p(&dir, "late.ply");
    assert_eq!(
        run(&["expand", "--in", s(&g), "--time-index", "6", "--out", s(&ply)]).status.code(),
        Some(1)
    );
    assert!(!ply.exists());
}

fn ply_payload(bytes: &[u8]) -> &[u8] {
    let end = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
    &bytes[end..]
}

#[test]
fn static_model_frames_are_identical() {
    let dir = TempDir::new().unwrap();
    let m = synth(&dir, "m.gifu", &["--sparsity", "0"]);
    let mut model = read_model(&fs::read(&m).unwrap()).unwrap();
    for a in &mut model.anchors {
        a.m_dy = 0.0;
    }
    let fixed = p(&dir, "static.gifu");
    fs::write(&fixed, gifstream_core::write_model(&model).unwrap()).unwrap();
    let (a, b) = (p(&dir, "a.ply"), p(&dir, "b.ply"));
    ok(&["expand", "--in", s(&fixed), "--time-index", "0", "--out", s(&a)]);
    ok(&["expand", "--in", s(&fixed), "--time-index", "5", "--out", s(&b)]);
    let (a, b) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ply_payload(&a), ply_payload(&b));
}

#[test]
fn stats_categories_sum_to_body() {
    let dir = TempDir::new().unwrap();
    let m = synth(&dir, "m.gifu", &[]);
    let g = p(&dir, "s.gifs");
    ok(&["encode", "--in", s(&m), "--out", s(&g)]);
    let r = json(&["stats", "--in", s(&g)]);
    assert!(r.values().all(|v| !v.is_object() && !v.is_array()));
    let sum: u64 = ["time_independent_feature", "attributes", "time_dependent_feature", "neural_networks"]
        .iter()
        .map(|k| r[*k].as_u64().unwrap())
        .sum();
    let total = r["total_bytes"].as_u64().unwrap();
    assert_eq!(sum, total - r["header_bytes"].as_u64().unwrap());
    assert_eq!(total, fs::metadata(&g).unwrap().len());
}

#[test]
fn all_pruned_input_has_tiny_vgf() {
    let dir = TempDir::new().unwrap();
    let m = synth(&dir, "m.gifu", &["--sparsity", "0"]);
    let g = p(&dir, "s.gifs");
    ok(&["encode", "--in", s(&m), "--out", s(&g)]);
    let r = json(&["stats", "--in", s(&g)]);
    assert!(r["time_dependent_feature"].as_u64().unwrap() <= 32, "{r:?}");
}

#[test]
fn thread_variable_is_validated() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gifstream"))
        .args(["synth", "--out", s(&p(&dir, "m.gifu"))])
        .env("GIFSTREAM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
