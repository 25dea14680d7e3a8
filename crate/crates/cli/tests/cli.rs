use std::path::Path;
use std::process::{Command, Output};

use proxsep_core::io::{read_jsonl, read_wav};
use proxsep_core::scene::ManifestRow;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_proximity-sep"));
    c.env("PROXSEP_WORKERS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small corpus, rooms and a rendered dataset under `root`.
fn render(root: &Path, count: &str) {
    let corpus = root.join("corpus");
    let rooms = root.join("rooms.jsonl");
    ok(&[
        "synth-corpus",
        "--seed",
        "3",
        "--speakers",
        "5,0,0",
        "--utterances",
        "1",
        "--out",
        p(&corpus),
    ]);
    ok(&[
        "gen-rooms",
        "--seed",
        "3",
        "--count",
        count,
        "--out",
        p(&rooms),
    ]);
    ok(&[
        "render",
        "--seed",
        "3",
        "--rooms",
        p(&rooms),
        "--corpus",
        p(&corpus),
        "--spp",
        "1.0",
        "--out",
        p(&root.join("data")),
    ]);
}

#[test]
fn help_lists_subcommands() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "gen-rooms",
        "render-rir",
        "render",
        "separate",
        "train",
        "eval",
        "report",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["gen-rooms", "--out", "x.jsonl", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_writes_consistent_mixtures() {
    let dir = tempfile::tempdir().unwrap();
    render(dir.path(), "3");
    let data = dir.path().join("data");
    let rows: Vec<ManifestRow> = read_jsonl(&data.join("manifest.jsonl")).unwrap();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        let mix = read_wav(&data.join(&row.paths.mix)).unwrap();
        let near = read_wav(&data.join(&row.paths.near)).unwrap();
        let far = read_wav(&data.join(&row.paths.far)).unwrap();
        for i in 0..mix.len() {
            assert!((mix.samples[i] - near.samples[i] - far.samples[i]).abs() < 1e-6);
        }
        assert_eq!(row.meta.spp, 1.0);
        assert!(row.meta.sources.iter().all(|s| s.present));
    }
}

#[test]
fn eval_without_estimates_fails() {
    let dir = tempfile::tempdir().unwrap();
    render(dir.path(), "1");
    let out = run(&[
        "eval",
        "--manifest",
        p(&dir.path().join("data/manifest.jsonl")),
        "--estimates",
        p(&dir.path().join("nothing")),
        "--out",
        p(&dir.path().join("report.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MissingEstimate"));
}

fn pipeline(root: &Path) -> (Vec<u8>, Vec<u8>) {
    render(root, "4");
    let manifest = root.join("data/manifest.jsonl");
    let est = root.join("est");
    ok(&[
        "separate",
        "--manifest",
        p(&manifest),
        "--mask",
        "oracle-ratio",
        "--out",
        p(&est),
    ]);
    let records = root.join("records.jsonl");
    ok(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--estimates",
        p(&est),
        "--records",
        p(&records),
        "--out",
        p(&root.join("eval.csv")),
    ]);
    let report = root.join("report.csv");
    ok(&["report", "--records", p(&records), "--out", p(&report)]);
    assert_eq!(
        std::fs::read(&report).unwrap(),
        std::fs::read(root.join("eval.csv")).unwrap()
    );
    (
        std::fs::read(manifest).unwrap(),
        std::fs::read(report).unwrap(),
    )
}

#[test]
fn pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(pipeline(a.path()), pipeline(b.path()));
}

#[test]
fn render_rir_exports_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let rooms = dir.path().join("rooms.jsonl");
    ok(&["gen-rooms", "--count", "1", "--out", p(&rooms)]);
    let out = dir.path().join("rirs");
    ok(&["render-rir", "--scene", p(&rooms), "--out", p(&out)]);
    assert!(out.join("scene000000_src0_rir.wav").is_file());
    assert!(out.join("scene000000_src4_rir.json").is_file());
}

#[test]
fn train_then_separate_with_model() {
    let dir = tempfile::tempdir().unwrap();
    render(dir.path(), "2");
    let manifest = dir.path().join("data/manifest.jsonl");
    let ckpt = dir.path().join("run/model.ckpt");
    ok(&[
        "train",
        "--manifest",
        p(&manifest),
        "--preset",
        "desk",
        "--steps",
        "2",
        "--batch-size",
        "2",
        "--out",
        p(&ckpt),
    ]);
    assert!(ckpt.is_file());
    assert!(dir.path().join("run/model_log.csv").is_file());
    let spec = format!("model:{}", p(&ckpt));
    ok(&[
        "separate",
        "--manifest",
        p(&manifest),
        "--mask",
        &spec,
        "--out",
        p(&dir.path().join("est")),
    ]);
}
