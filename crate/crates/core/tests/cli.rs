use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gcs_probe::interpret;

fn gcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcs")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gcs(args);
    assert!(
        out.status.success(),
        "gcs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots").join(name);
    fs::read_to_string(p).unwrap()
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Small synthetic instance on disk: graph.tsv, base.gcse, enhanced.gcse, truth.json.
fn small_instance(dir: &Path, seed: &str) -> PathBuf {
    let inst = dir.join("inst");
    ok(&["synth", "--out", s(&inst), "--seed", seed, "--nodes", "60", "--dim", "4"]);
    inst
}

fn train_small(inst: &Path, out: &Path) {
    ok(&[
        "train",
        "--graph",
        s(&inst.join("graph.tsv")),
        "--base",
        s(&inst.join("base.gcse")),
        "--enhanced",
        s(&inst.join("enhanced.gcse")),
        "--out",
        s(out),
        "--seed",
        "3",
        "--epochs",
        "15",
        "--heads",
        "2",
        "--attn-dim",
        "4",
    ]);
}

fn interpret_args<'a>(inst: &'a Path, model: &'a Path, out: &'a Path) -> Vec<String> {
    [
        "interpret",
        "--graph",
        s(&inst.join("graph.tsv")),
        "--base",
        s(&inst.join("base.gcse")),
        "--model",
        s(model),
        "--out",
        s(out),
    ]
    .map(String::from)
    .to_vec()
}

#[test]
fn help_matches_snapshots() {
    assert_eq!(ok(&["--help"]), snapshot("gcs.txt"));
    for cmd in [
        "train",
        "interpret",
        "verify",
        "synth",
        "baseline",
        "spectral-check",
        "histogram",
        "score",
    ] {
        assert_eq!(ok(&[cmd, "--help"]), snapshot(&format!("{cmd}.txt")), "{cmd} --help");
    }
}

#[test]
fn optional_flags_show_defaults() {
    for cmd in ["train", "interpret", "synth", "baseline"] {
        let help = ok(&[cmd, "--help"]);
        let usage = help.lines().find(|l| l.starts_with("Usage:")).unwrap().to_string();
        for line in help.lines().map(str::trim_start).filter(|l| l.starts_with("--") && !l.starts_with("--help")) {
            let flag = line.split_whitespace().next().unwrap();
            if !usage.contains(&format!("{flag} ")) {
                let described = help.split(flag).nth(1).unwrap().split("\n      --").next().unwrap();
                assert!(described.contains("[default:"), "{cmd} {flag} lacks a default");
            }
        }
    }
}

#[test]
fn exit_codes() {
    assert_eq!(gcs(&[]).status.code(), Some(2));
    assert_eq!(gcs(&["verify", "--suite", "nonsense"]).status.code(), Some(2));
    assert_eq!(gcs(&["train", "--graph", "g.tsv"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.tsv");
    let out = gcs(&["histogram", "--graph", s(&missing)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "0\t1\nzero\t2\n").unwrap();
    let out = gcs(&["histogram", "--graph", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains('2'));

    let inst = small_instance(dir.path(), "1");
    let run = dir.path().join("run");
    train_small(&inst, &run);
    let other = dir.path().join("other");
    ok(&["synth", "--out", s(&other), "--seed", "1", "--nodes", "60", "--dim", "5"]);
    let args = interpret_args(&other, &run.join("checkpoint.json"), &dir.path().join("x"));
    let out = Command::new(env!("CARGO_BIN_EXE_gcs")).args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "dimension mismatch");

    let out = gcs(&[
        "train",
        "--graph",
        s(&inst.join("graph.tsv")),
        "--base",
        s(&inst.join("base.gcse")),
        "--enhanced",
        s(&inst.join("enhanced.gcse")),
        "--out",
        s(&dir.path().join("diverged")),
        "--seed",
        "0",
        "--epochs",
        "5",
        "--lr",
        "1e300",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seeded_commands_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let inst = small_instance(dir.path(), "5");
    let first_inst = read_dir_bytes(&inst);
    assert_eq!(first_inst.len(), 4);
    small_instance(dir.path(), "5");
    assert_eq!(read_dir_bytes(&inst), first_inst);

    let run = dir.path().join("run");
    train_small(&inst, &run);
    let first_run = read_dir_bytes(&run);
    train_small(&inst, &run);
    assert_eq!(read_dir_bytes(&run), first_run);

    let rep = dir.path().join("rep");
    let args = interpret_args(&inst, &run.join("checkpoint.json"), &rep);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    let first_rep = read_dir_bytes(&rep);
    ok(&args);
    assert_eq!(read_dir_bytes(&rep), first_rep);
}

#[test]
fn report_summaries_recompute_from_edges_csv() {
    let dir = tempfile::tempdir().unwrap();
    let inst = small_instance(dir.path(), "2");
    let run = dir.path().join("run");
    train_small(&inst, &run);
    let mut last_pct = f64::INFINITY;
    for threshold in ["0.01", "0.05", "0.1", "0.2", "0.5"] {
        let rep = dir.path().join(format!("rep{threshold}"));
        let mut args = interpret_args(&inst, &run.join("checkpoint.json"), &rep);
        args.extend(["--edge-threshold".to_string(), threshold.to_string()]);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&args);
        let report = interpret::read_report(&rep.join("report.json")).unwrap();
        let edges = interpret::read_edges_csv(&rep.join("edges.csv")).unwrap();
        assert_eq!(edges, report.edges);
        assert_eq!(interpret::summarize(&edges, &report.nodes), report.summaries);
        assert!(report.summaries.integrated_pct <= last_pct);
        last_pct = report.summaries.integrated_pct;
        assert_eq!(report.provenance.seed, Some(3));
        assert!(report.provenance.checkpoint_hash.is_some());
    }
}

#[test]
fn pipeline_scores_against_truth() {
    let dir = tempfile::tempdir().unwrap();
    let inst = small_instance(dir.path(), "8");
    let run = dir.path().join("run");
    train_small(&inst, &run);
    let curve = fs::read_to_string(run.join("mi_curve.csv")).unwrap();
    assert!(curve.starts_with("step,bound_nats\n"));
    assert_eq!(curve.lines().count(), 16);
    let rep = dir.path().join("rep");
    let args = interpret_args(&inst, &run.join("checkpoint.json"), &rep);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    let score: serde_json::Value = serde_json::from_str(&ok(&[
        "score",
        "--report",
        s(&rep.join("report.json")),
        "--truth",
        s(&inst.join("truth.json")),
    ]))
    .unwrap();
    let auc = score["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn baseline_writes_entropy_columns() {
    let dir = tempfile::tempdir().unwrap();
    let inst = small_instance(dir.path(), "4");
    let out = dir.path().join("var");
    let summary: serde_json::Value = serde_json::from_str(&ok(&[
        "variance",
        "--graph",
        s(&inst.join("graph.tsv")),
        "--base",
        s(&inst.join("base.gcse")),
        "--enhanced",
        s(&inst.join("enhanced.gcse")),
        "--out",
        s(&out),
        "--seed",
        "0",
        "--runs",
        "3",
        "--epochs",
        "5",
        "--probe-epochs",
        "20",
    ]))
    .unwrap();
    assert_eq!(summary["runs"], 3);
    let (g, _) = gcs_probe::graph::load_edge_list(&inst.join("graph.tsv"), None).unwrap();
    for name in ["probe_entropy.csv", "gcs_entropy.csv", "control_entropy.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("entropy_bits"));
        let values: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
        assert_eq!(values.len(), g.edge_count());
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(out.join("entropy_histogram.csv").exists());
}

#[test]
fn histogram_and_spectral_check_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.tsv");
    fs::write(&g, "# comment\n0\t1\ta\n1\t2\ta\n2\t2\tb\n1\t0\tb\n").unwrap();
    let h: serde_json::Value = serde_json::from_str(&ok(&["histogram", "--graph", s(&g)])).unwrap();
    assert_eq!(h["node_count"], 3);
    assert_eq!(h["edge_count"], 2);
    assert_eq!(h["self_loops_dropped"], 1);
    assert_eq!(h["duplicates_merged"], 1);
    assert_eq!(h["degree"], serde_json::json!({"1": 2, "2": 1}));
    assert_eq!(h["annotation"], serde_json::json!({"a": 2}));

    let inst = small_instance(dir.path(), "6");
    let c: serde_json::Value = serde_json::from_str(&ok(&[
        "spectral-check",
        "--graph",
        s(&inst.join("graph.tsv")),
        "--base",
        s(&inst.join("base.gcse")),
    ]))
    .unwrap();
    assert!(c["roundtrip_error"].as_f64().unwrap() < 1e-8);
    assert!(c["orthogonality_error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn verify_spectral_suite_passes() {
    let report: serde_json::Value = serde_json::from_str(&ok(&["verify", "--suite", "spectral"])).unwrap();
    assert_eq!(report["suite"], "spectral");
    assert_eq!(report["passed"], true);
    assert!(report["schema_version"].is_u64());
}
