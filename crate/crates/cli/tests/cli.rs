use std::path::Path;
use std::process::{Command, Output};

use gaitcontour::contour_pose::{read_cpz, GraphKind, Ordering, CONTOUR_POSE_POINTS};
use gaitcontour::evaluation::EvalReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaitcontour"))
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

/// Every file under `dir` with its bytes, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY_CONFIG: &str = r#"{
  "model": {"local_channels": [8, 8, 8], "global_channels": [8], "heads": 2, "embed_dim": 8},
  "triplet": {"p_subjects": 2, "k_seqs": 2, "steps": 3, "clip_frames": 2}
}"#;

#[test]
fn flops_prints_one_fifth() {
    let out = ok(&["flops"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "ratio 0.200000"), "{text}");
    let json: serde_json::Value = serde_json::from_slice(&ok(&["flops", "--json"]).stdout).unwrap();
    assert_eq!(json["total"]["ratio"], 0.2);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["synth", "--ids", "2"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--out", "x", "--ids", "many"]).status.code(), Some(2));
    let v = ok(&["--version"]);
    assert!(String::from_utf8(v.stdout).unwrap().contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn synth_writes_every_sequence_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--ids",
            "8",
            "--seqs",
            "4",
            "--frames",
            "3",
            "--out",
            p(out),
            "--seed",
            "7",
        ]);
    }
    let seq_dirs = std::fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(seq_dirs, 32);
    assert_eq!(snapshot(&a), snapshot(&b));
}

#[test]
fn extract_variants() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "synth",
        "--ids",
        "2",
        "--seqs",
        "1",
        "--frames",
        "3",
        "--out",
        p(&data),
        "--seed",
        "1",
    ]);

    let cpz = dir.path().join("cpz");
    ok(&["extract", "--masks", p(&data), "--out", p(&cpz)]);
    let seq = read_cpz(&cpz.join("s000_q00.cpz")).unwrap();
    assert_eq!(seq.kind, GraphKind::ContourPose);
    assert_eq!(seq.subject_id.as_deref(), Some("s000"));
    assert!(seq.frames.iter().all(|f| f.points.len() == CONTOUR_POSE_POINTS));

    let ring = dir.path().join("ring.cpz");
    ok(&[
        "extract",
        "--masks",
        p(&data.join("s001_q00")),
        "--out",
        p(&ring),
        "--uniform112",
    ]);
    let seq = read_cpz(&ring).unwrap();
    assert_eq!(seq.kind, GraphKind::UniformRing);
    assert!(seq.frames.iter().all(|f| f.points.len() == 112));

    let one = data.join("s000_q00");
    let shuffled: Vec<Vec<u8>> = ["x.cpz", "y.cpz"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            ok(&[
                "extract",
                "--masks",
                p(&one),
                "--out",
                p(&out),
                "--no-order",
                "--seed",
                "3",
            ]);
            assert_eq!(read_cpz(&out).unwrap().ordering, Ordering::Shuffled);
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(shuffled[0], shuffled[1]);
    assert_ne!(shuffled[0], std::fs::read(cpz.join("s000_q00.cpz")).unwrap());
}

#[test]
fn extract_reports_the_failing_frame() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--ids", "2", "--seqs", "1", "--frames", "3", "--out", p(&data)]);
    let seq = data.join("s000_q00");
    let blank = gaitcontour::geometry::SilhouetteFrame::empty(64, 64);
    gaitcontour::io::write_pgm(&seq.join("000002.pgm"), &blank).unwrap();
    let out = run(&["extract", "--masks", p(&seq), "--out", p(&dir.path().join("s.cpz"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("frame 1") && err.contains("no foreground"), "{err}");
}

#[test]
fn bad_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"model": {"heads": 4, "bogus": 1}}"#).unwrap();
    let out = run(&["flops", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("bogus"));
    std::fs::write(&cfg, r#"{"model": {"heads": 5}}"#).unwrap();
    assert_eq!(run(&["flops", "--config", p(&cfg)]).status.code(), Some(1));
    let out = run(&["train", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_eval_is_deterministic_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cpz = dir.path().join("cpz");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    ok(&[
        "synth",
        "--ids",
        "2",
        "--seqs",
        "2",
        "--frames",
        "4",
        "--out",
        p(&data),
        "--seed",
        "3",
    ]);
    ok(&["extract", "--masks", p(&data), "--out", p(&cpz)]);

    let mut runs = Vec::new();
    for jobs in ["1", "2"] {
        let run_dir = dir.path().join(format!("run{jobs}"));
        ok(&[
            "--jobs",
            jobs,
            "train",
            "--config",
            p(&cfg),
            "--data",
            p(&cpz),
            "--out",
            p(&run_dir),
            "--seed",
            "5",
        ]);
        let report = run_dir.join("report.json");
        ok(&[
            "--jobs",
            jobs,
            "eval",
            "--checkpoint",
            p(&run_dir.join("model.gct")),
            "--gallery",
            p(&cpz),
            "--probe",
            p(&cpz),
            "--out",
            p(&report),
            "--scores",
            p(&run_dir.join("scores.csv")),
            "--plot",
            p(&run_dir.join("roc.svg")),
        ]);
        let parsed: EvalReport = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
        assert_eq!(parsed.rank(1), Some(1.0));
        runs.push(snapshot(&run_dir));
    }
    assert_eq!(runs[0], runs[1]);
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "config.json",
            "loss.csv",
            "model.gct",
            "report.json",
            "roc.svg",
            "scores.csv"
        ]
    );
}

#[test]
fn eval_prints_to_stdout_without_out() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cpz = dir.path().join("cpz");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    ok(&["synth", "--ids", "2", "--seqs", "2", "--frames", "3", "--out", p(&data)]);
    ok(&["extract", "--masks", p(&data), "--out", p(&cpz)]);
    let run_dir = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&cpz),
        "--out",
        p(&run_dir),
        "--steps",
        "1",
    ]);
    let out = ok(&[
        "eval",
        "--checkpoint",
        p(&run_dir.join("model.gct")),
        "--gallery",
        p(&cpz),
        "--probe",
        p(&cpz),
    ]);
    let report: EvalReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.gallery_size, 4);
    let missing = run(&[
        "eval",
        "--checkpoint",
        p(&run_dir.join("model.gct")),
        "--gallery",
        p(&cpz),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}
