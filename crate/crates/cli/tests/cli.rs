use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dcenorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcenorm"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = dcenorm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

fn phantom(dir: &Path, n: usize) -> PathBuf {
    let cfg = write(&dir.join("phantom.json"), &format!("{{\"n_subjects\": {n}}}"));
    let out = dir.join("raw");
    ok(&["phantom", "--config", s(&cfg), "--out", s(&out), "--seed", "0"]);
    out.join("manifest.json")
}

#[test]
fn single_subject_training_picks_that_subject() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom(dir.path(), 1);
    let model = dir.path().join("model.json");
    ok(&["train", "--manifest", s(&manifest), "--out", s(&model)]);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(m["archetype_subject_id"], "sub-000");
    assert_eq!(m["n_training"], 1);
}

#[test]
fn missing_model_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom(dir.path(), 1);
    let out = dcenorm(&[
        "normalize",
        "--manifest",
        s(&manifest),
        "--model",
        s(&dir.path().join("nope.json")),
        "--out-dir",
        s(&dir.path().join("norm")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "io");
    assert!(e["message"].as_str().unwrap().contains("nope.json"));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom(dir.path(), 1);
    let cfg = write(&dir.path().join("cfg.json"), r#"{"segmentation": {"air_fracton": 0.1}}"#);
    let out = dcenorm(&[
        "--config",
        s(&cfg),
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_line(&out);
    assert_eq!(e["error"], "validation");
    assert!(e["message"].as_str().unwrap().contains("air_fracton"), "{e}");
    let out = dcenorm(&[
        "train",
        "--manifest",
        s(&manifest),
        "--out",
        s(&dir.path().join("m.json")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let bad_phantom = write(&dir.path().join("p.json"), r#"{"n_subjets": 3}"#);
    let out = dcenorm(&["phantom", "--config", s(&bad_phantom), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("n_subjets"));
}

#[test]
fn usage_errors_exit_with_validation_code() {
    let out = dcenorm(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "validation");
    assert!(dcenorm(&["--help"]).status.success());
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn full_pipeline_aligns_groups_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = phantom(d, 16);
    let seg = d.join("seg");
    ok(&["segment", "--manifest", s(&raw), "--out-dir", s(&seg)]);
    let seg_manifest = seg.join("manifest.json");
    let model = d.join("model.json");
    let anchors = d.join("anchors.json");
    ok(&["train", "--manifest", s(&seg_manifest), "--out", s(&model), "--emit-anchors", s(&anchors)]);
    let norm = d.join("norm");
    let curves = d.join("curves");
    ok(&[
        "normalize",
        "--manifest",
        s(&seg_manifest),
        "--model",
        s(&model),
        "--out-dir",
        s(&norm),
        "--emit-mapping",
        s(&curves),
    ]);
    let before = d.join("before.csv");
    let after = d.join("after.csv");
    ok(&["features", "--manifest", s(&seg_manifest), "--out", s(&before)]);
    ok(&["features", "--manifest", s(&norm.join("manifest.json")), "--out", s(&after)]);
    let report = d.join("report.json");
    ok(&[
        "evaluate",
        "--before",
        s(&before),
        "--after",
        s(&after),
        "--manifest",
        s(&raw),
        "--after-manifest",
        s(&norm.join("manifest.json")),
        "--group-by",
        "te,field",
        "--out",
        s(&report),
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["n_subjects"], 16);
    let groupings = r["groupings"].as_array().unwrap();
    assert_eq!(groupings.len(), 2);
    for g in groupings {
        for n in 10..=15 {
            let f = &g["features"][n - 1];
            assert_eq!(f["feature"], format!("F{n}"));
            let (b, a) = (f["before"]["ks"].as_f64().unwrap(), f["after"]["ks"].as_f64().unwrap());
            assert!(a < b, "{} F{n}: KS {b} -> {a}", g["key"]);
        }
    }
    assert!(d.join("report.csv").exists());
    assert_eq!(std::fs::read_dir(&curves).unwrap().count(), 16);
    let emitted: Value = serde_json::from_str(&std::fs::read_to_string(&anchors).unwrap()).unwrap();
    assert_eq!(emitted.as_array().unwrap().len(), 16);

    let aucs = d.join("auc.csv");
    ok(&["auc", "--features", s(&before), "--labels", s(&d.join("raw/labels.csv")), "--out", s(&aucs)]);
    assert_eq!(std::fs::read_to_string(&aucs).unwrap().lines().count(), 16);

    // a second run over the same inputs reproduces every output byte
    let model2 = d.join("model2.json");
    ok(&["train", "--manifest", s(&seg_manifest), "--out", s(&model2)]);
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(&model2).unwrap());
    let norm2 = d.join("norm2");
    ok(&["normalize", "--manifest", s(&seg_manifest), "--model", s(&model2), "--out-dir", s(&norm2)]);
    assert!(read_dir_bytes(&norm.join("volumes")) == read_dir_bytes(&norm2.join("volumes")));
    assert!(read_dir_bytes(&norm.join("masks")) == read_dir_bytes(&norm2.join("masks")));
    let after2 = d.join("after2.csv");
    ok(&["--jobs", "1", "features", "--manifest", s(&norm2.join("manifest.json")), "--out", s(&after2)]);
    assert_eq!(std::fs::read(&after).unwrap(), std::fs::read(&after2).unwrap());
}
