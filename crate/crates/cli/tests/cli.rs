use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dimt_core::dataset::TrainingExample;
use dimt_core::jsonl::read_all;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dimt");
const ARTIFACTS: [&str; 4] = ["candidates.jsonl", "selected.jsonl", "postprocessed.jsonl", "report.json"];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Copies the bundled fixtures into a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in ["segments.jsonl", "references.jsonl", "responses.jsonl", "pipeline.toml"] {
        std::fs::copy(fixtures().join(name), dir.path().join(name)).unwrap();
    }
    dir
}

fn dimt(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap()
}

fn stage_names(m: &Value) -> Vec<String> {
    m["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap().to_string()).collect()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join("out").join(name)).unwrap()
}

#[test]
fn full_pipeline_then_partial_stages() {
    let ws = workspace();
    let out = dimt(ws.path(), &["pipeline", "--config", "pipeline.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = manifest(ws.path());
    assert_eq!(stage_names(&m), ["generate", "mbr", "postprocess", "score"]);
    assert_eq!(m["stages"][0]["records_out"], 10);
    assert_eq!(m["stages"][0]["metrics"]["requests"], 110);
    assert_eq!(m["stages"][0]["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["config_fingerprint"].as_str().unwrap().len(), 16);

    let out = dimt(ws.path(), &["pipeline", "--config", "pipeline.toml", "--stages", "mbr,postprocess,score"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stage_names(&manifest(ws.path())), ["mbr", "postprocess", "score"]);
}

#[test]
fn missing_hypotheses_name_the_producing_stage() {
    let ws = workspace();
    let out = dimt(ws.path(), &["pipeline", "--config", "pipeline.toml", "--stages", "score"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("`postprocess`"), "{}", stderr(&out));

    let out = dimt(ws.path(), &["score", "--hyp", "nope.jsonl", "--ref", "references.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("`postprocess`"));

    let out = dimt(ws.path(), &["mbr", "--input", "nope.jsonl", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("`generate`"));
}

#[test]
fn repeated_runs_produce_identical_artifacts() {
    let a = workspace();
    let b = workspace();
    for ws in [&a, &b] {
        let out = dimt(ws.path(), &["pipeline", "--config", "pipeline.toml"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for name in ARTIFACTS {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn stages_run_separately_match_one_invocation() {
    let whole = workspace();
    let out = dimt(whole.path(), &["pipeline", "--config", "pipeline.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let split = workspace();
    for cmd in ["generate", "mbr", "postprocess", "score"] {
        let out = dimt(split.path(), &[cmd, "--config", "pipeline.toml"]);
        assert!(out.status.success(), "{cmd}: {}", stderr(&out));
    }
    for name in ARTIFACTS {
        assert_eq!(read(whole.path(), name), read(split.path(), name), "{name} differs");
    }

    // Explicit flags and paths give the same selections too.
    let out = dimt(
        split.path(),
        &["mbr", "--input", "out/candidates.jsonl", "--out", "out/flags.jsonl", "--parallelism", "3", "--max-order", "4",
          "--smoothing", "floor", "--epsilon", "0.1", "--tokenize", "mixed"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(read(split.path(), "flags.jsonl"), read(whole.path(), "selected.jsonl"));
}

#[test]
fn alignment_errors_and_partial_scoring() {
    let ws = workspace();
    std::fs::write(ws.path().join("hyp.jsonl"), "{\"id\":\"doc1-seg01\",\"text\":\"季度 报告\"}\n{\"id\":\"ghost\",\"text\":\"x\"}\n").unwrap();
    let out = dimt(ws.path(), &["score", "--hyp", "hyp.jsonl", "--ref", "references.jsonl", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).contains("doc1-seg02"));

    let out = dimt(
        ws.path(),
        &["score", "--hyp", "hyp.jsonl", "--ref", "references.jsonl", "--out", "r.json", "--allow-partial"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let diag: Value = serde_json::from_str(&std::fs::read_to_string(ws.path().join("r.json.diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["missing_hypotheses"].as_array().unwrap().len(), 9);
    assert_eq!(diag["unmatched_hypotheses"][0], "ghost");
}

#[test]
fn reports_merge_into_one_table() {
    let ws = workspace();
    std::fs::write(ws.path().join("hyp.jsonl"), "{\"id\":\"doc1-seg01\",\"text\":\"季度 报告 显示 收入 增长 了 百分之十二 。\"}\n").unwrap();
    std::fs::write(ws.path().join("ref.jsonl"), "{\"id\":\"doc1-seg01\",\"source_text\":\"季度 报告 显示 收入 增长 了 百分之十二 。\",\"reference_translation\":\"季度 报告 显示 收入 增长 了 百分之十二 。\"}\n").unwrap();
    for (split, sub) in [("valid", "ocr"), ("test", "mt")] {
        let out = dimt(
            ws.path(),
            &["score", "--track", "1", "--split", split, "--subtask", sub, "--hyp", "hyp.jsonl", "--ref", "ref.jsonl",
              "--out", "t.json", "--merge", "--label", "sys"],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(ws.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(report["rows"][0]["cells"].as_array().unwrap().len(), 2);

    let out = dimt(
        ws.path(),
        &["score", "--track", "2", "--split", "valid", "--subtask", "ocr", "--hyp", "hyp.jsonl", "--ref", "ref.jsonl"],
    );
    assert_eq!(out.status.code(), Some(4), "track 2 has no OCR column: {}", stderr(&out));
}

#[test]
fn collection_failures_go_to_sidecar() {
    let ws = workspace();
    let responses = std::fs::read_to_string(ws.path().join("responses.jsonl")).unwrap();
    let kept: String = responses.lines().skip(1).map(|l| format!("{l}\n")).collect();
    std::fs::write(ws.path().join("partial.jsonl"), kept).unwrap();

    let out = dimt(
        ws.path(),
        &["generate", "--config", "pipeline.toml", "--mock-responses", "partial.jsonl", "--out", "c.jsonl", "--samples", "2"],
    );
    assert_eq!(out.status.code(), Some(6), "{}", stderr(&out));
    let ok = std::fs::read_to_string(ws.path().join("c.jsonl")).unwrap();
    assert_eq!(ok.lines().count(), 9);
    let errors = std::fs::read_to_string(ws.path().join("c.jsonl.errors.jsonl")).unwrap();
    assert_eq!(errors.lines().count(), 1);
    assert!(errors.contains("doc1-seg01"));

    let out = dimt(
        ws.path(),
        &["generate", "--config", "pipeline.toml", "--mock-responses", "partial.jsonl", "--out", "c.jsonl", "--fail-fast"],
    );
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn postprocess_flags_override_config() {
    let ws = workspace();
    std::fs::write(ws.path().join("h.jsonl"), "{\"id\":\"a\",\"text\":\"x ------- y  z\"}\n").unwrap();
    std::fs::write(ws.path().join("pp.toml"), "[postprocess]\nmax_run_length = 5\ncollapse_spaces = false\n").unwrap();
    let out = dimt(
        ws.path(),
        &["postprocess", "--config", "pp.toml", "--input", "h.jsonl", "--out", "o.jsonl", "--max-run-length", "3"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(ws.path().join("o.jsonl")).unwrap();
    assert!(text.contains("\"x --- y  z\""), "{text}");
}

#[test]
fn build_data_is_seeded_and_counted() {
    let ws = workspace();
    std::fs::write(ws.path().join("mix.toml"), "seed = 5\n[weights]\nocr_only = 1.0\nmt_only = 1.0\npcot_chained = 2.0\nend_to_end = 1.0\n").unwrap();
    let mut segs = String::new();
    for i in 0..40 {
        segs.push_str(&format!(
            "{{\"id\":\"s{i}\",\"source_text\":\"text {i}\",\"reference_translation\":\"译文 {i}\",\"image_ref\":\"img/{i}.png\"}}\n"
        ));
    }
    std::fs::write(ws.path().join("segs.jsonl"), segs).unwrap();
    for out_name in ["a.jsonl", "b.jsonl"] {
        let out = dimt(
            ws.path(),
            &["build-data", "--track", "1", "--split", "train", "--mixture", "mix.toml", "--input", "segs.jsonl", "--out", out_name],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(ws.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(ws.path().join("b.jsonl")).unwrap());
    let examples: Vec<TrainingExample> = read_all(ws.path().join("a.jsonl")).unwrap();
    assert_eq!(examples.len(), 40);
    let stats: Value = serde_json::from_str(&std::fs::read_to_string(ws.path().join("a.jsonl.stats.json")).unwrap()).unwrap();
    assert_eq!(stats["stats"]["total"], 40);
    assert_eq!(stats["seed"], 5);

    let out = dimt(
        ws.path(),
        &["build-data", "--track", "1", "--split", "train", "--mixture", "mix.toml", "--seed", "6", "--input", "segs.jsonl", "--out", "c.jsonl"],
    );
    assert!(out.status.success());
    assert_ne!(a, std::fs::read(ws.path().join("c.jsonl")).unwrap());
}

#[test]
fn every_subcommand_documents_itself() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["generate", "mbr", "postprocess", "score", "build-data", "pipeline", "mock-server"] {
        let help = dimt(dir.path(), &[cmd, "--help"]);
        assert!(help.status.success(), "{cmd} --help");
        assert!(String::from_utf8_lossy(&help.stdout).contains("Usage: dimt"));
        let version = dimt(dir.path(), &[cmd, "--version"]);
        assert!(version.status.success(), "{cmd} --version");
        assert!(String::from_utf8_lossy(&version.stdout).contains(env!("CARGO_PKG_VERSION")));
    }
}

#[test]
fn usage_errors_exit_two() {
    let ws = workspace();
    let out = dimt(ws.path(), &["pipeline", "--config", "pipeline.toml", "--stages", "score,mbr"]);
    assert_eq!(out.status.code(), Some(2));
    let out = dimt(ws.path(), &["score", "--track", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_is_a_data_error() {
    let ws = workspace();
    std::fs::write(ws.path().join("bad.toml"), "[sampling]\ntemperature = 5.0\n").unwrap();
    let out = dimt(ws.path(), &["generate", "--config", "bad.toml", "--input", "segments.jsonl", "--out", "c.jsonl"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}
