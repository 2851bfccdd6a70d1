//! The `blocksync` command line, driven in-process.

use std::path::Path;

use blocksync_harness::cli::main_with;
use blocksync_harness::report::parse_records;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["blocksync"];
    argv.extend_from_slice(args);
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn synth(dir: &Path, count: &str) {
    let (code, _, err) = run(&["synth", "--out", dir.to_str().unwrap(), "--count", count, "--seed", "3", "--labels", "40"]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn delay_of_the_default_layout() {
    let (code, out, _) = run(&["delay"]);
    assert_eq!(code, 0);
    assert_eq!(out, "0.64\n");
    let (_, out, _) = run(&["delay", "--block", "8,8,4", "--downsample", "4", "--frame-shift-ms", "10"]);
    assert_eq!(out, "0.32\n");
}

#[test]
fn fig2_scenario_reports_the_boundary() {
    let (code, out, err) = run(&["scenario", "fig2.tbl", "--beam", "5", "--conservative", "off"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("I_1 = 5 (detected)"), "{out}");
    assert!(out.contains("best: he clasp ed his hands on the desk and said"), "{out}");
    let (_, out, _) = run(&["scenario", "fig2.tbl", "--beam", "5"]);
    assert!(out.contains("I_1 = 4 (detected)"), "{out}");
}

#[test]
fn single_block_compare_has_no_token_diffs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let d = dir.path();
    let (code, out, err) = run(&[
        "compare",
        "--model",
        d.join("model.txt").to_str().unwrap(),
        "--vocab",
        d.join("vocab.txt").to_str().unwrap(),
        "--input",
        d.join("manifest.tsv").to_str().unwrap(),
        "--block",
        "0,400,0",
        "--beam",
        "3",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("token diffs: 0"), "{out}");
}

#[test]
fn decode_writes_records_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2");
    let d = dir.path();
    let records = d.join("out.jsonl");
    let trace = d.join("trace.jsonl");
    let (code, out, err) = run(&[
        "decode",
        "--model",
        d.join("model.txt").to_str().unwrap(),
        "--vocab",
        d.join("vocab.txt").to_str().unwrap(),
        "--input",
        d.join("manifest.tsv").to_str().unwrap(),
        "--beam",
        "4",
        "--ctc-weight",
        "0.5",
        "--bbd-source",
        "joint",
        "--jobs",
        "2",
        "--output",
        records.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(!out.contains("schema_version"), "{out}");
    let recs = parse_records(&std::fs::read_to_string(&records).unwrap()).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].id, "synth-0000");
    assert_eq!(recs[1].id, "synth-0001");
    for r in &recs {
        assert_eq!(r.block_times.len(), r.boundaries.blocks);
        assert!(r.errors.is_some());
    }
    let lines = std::fs::read_to_string(&trace).unwrap();
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["utterance"], "synth-0000");
    assert_eq!(first["mode"], "streaming");
    assert!(first["event"].is_string());
}

#[test]
fn missing_model_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let d = dir.path();
    let missing = d.join("nope.txt");
    let (code, _, err) = run(&[
        "decode",
        "--model",
        missing.to_str().unwrap(),
        "--vocab",
        d.join("vocab.txt").to_str().unwrap(),
        "--input",
        d.join("manifest.tsv").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("nope.txt"), "{err}");
}

#[test]
fn malformed_manifest_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let d = dir.path();
    let manifest = d.join("bad.tsv");
    std::fs::write(&manifest, "# comment\nsynth-0000\tfeats/synth-0000.txt\nsynth-0000\tfeats/synth-0000.txt\n").unwrap();
    let (code, _, err) = run(&[
        "decode",
        "--model",
        d.join("model.txt").to_str().unwrap(),
        "--vocab",
        d.join("vocab.txt").to_str().unwrap(),
        "--input",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("bad.tsv: line 3"), "{err}");
}

#[test]
fn malformed_features_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1");
    let d = dir.path();
    let feats = d.join("feats/synth-0000.txt");
    let mut text: Vec<String> = std::fs::read_to_string(&feats).unwrap().lines().map(String::from).collect();
    text[2] = "0.1 oops".into();
    std::fs::write(&feats, text.join("\n")).unwrap();
    let (code, _, err) = run(&[
        "decode",
        "--model",
        d.join("model.txt").to_str().unwrap(),
        "--vocab",
        d.join("vocab.txt").to_str().unwrap(),
        "--input",
        feats.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("synth-0000.txt: line 3"), "{err}");
}

#[test]
fn bad_flags_exit_with_usage_status() {
    let (code, _, err) = run(&["decode", "--beam", "zero"]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());
    let (code, _, err) = run(&["delay", "--block", "16,16"]);
    assert_eq!(code, 2, "{err}");
    let (code, _, err) = run(&["scenario", "fig2.tbl", "--beam", "0"]);
    assert_eq!(code, 1, "{err}");
}
