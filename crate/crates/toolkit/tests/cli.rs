use std::path::Path;
use std::process::Command;

use pflow_toolkit::args::{apply_overrides, Cli, Command as Sub, GenArgs, TrainArgs};
use pflow_toolkit::check::{logdet_suite, run_checks, CheckHooks, SUITE_LOGDET};
use pflow_toolkit::commands::{cmd_eval, cmd_gen, cmd_sample, cmd_train, parse_sample_name};
use pflow_toolkit::manifest::{sha256_file, RunManifest, MANIFEST_FILE};
use pflow_toolkit::ToolError;
use clap::Parser;

fn pflow() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pflow"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn parse(argv: &[&str]) -> Sub {
    let mut full = vec!["pflow"];
    full.extend_from_slice(argv);
    Cli::try_parse_from(full).unwrap().command
}

fn small_corpus(dir: &Path, n: &str) {
    let Sub::Gen(a) = parse(&["gen", "--out", s(dir), "--utterances", n, "--min-frames", "40", "--max-frames", "60"])
    else {
        unreachable!()
    };
    cmd_gen(&a).unwrap();
}

#[test]
fn gen_writes_manifest_with_matching_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    small_corpus(&out, "3");
    let m = RunManifest::load(&out).unwrap();
    assert_eq!(m.command, "gen");
    assert_eq!(m.artifacts.len(), 6);
    for (rel, digest) in &m.artifacts {
        assert_eq!(&sha256_file(&out.join(rel)).unwrap(), digest);
    }
    assert!(m.verify_artifacts(&out).unwrap().is_empty());
}

#[test]
fn gen_refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    small_corpus(&out, "2");
    let status = pflow().args(["gen", "--out", s(&out), "--utterances", "2"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    let status = pflow()
        .args(["gen", "--out", s(&out), "--utterances", "2", "--min-frames", "40", "--max-frames", "60", "--force"])
        .output()
        .unwrap();
    assert!(status.status.success());

    // a foreign directory is never cleared, even with --force
    let foreign = tmp.path().join("foreign");
    std::fs::create_dir(&foreign).unwrap();
    std::fs::write(foreign.join("keep.txt"), "x").unwrap();
    let status = pflow().args(["gen", "--out", s(&foreign), "--force"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(foreign.join("keep.txt").exists());
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pflow()
        .args(["train", "--corpus", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("run"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    let bad_flag = pflow().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn eval_of_references_against_themselves_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    small_corpus(&corpus, "4");
    let Sub::Eval(a) = parse(&[
        "eval",
        "--reference",
        s(&corpus),
        "--samples",
        s(&corpus.join("tracks")),
        "--out",
        s(&tmp.path().join("e")),
    ]) else {
        unreachable!()
    };
    let r = cmd_eval(&a).unwrap().report;
    assert_eq!(r.vde.mean, 0.0);
    assert_eq!(r.vfe.mean, 0.0);
    assert_eq!(r.enr.mean, 0.0);
    assert_eq!(r.moments_reference, r.moments_predicted);
    for f in ["report.json", "metrics.csv", "moments.csv", MANIFEST_FILE] {
        assert!(tmp.path().join("e").join(f).exists(), "{f}");
    }
}

#[test]
fn eval_reports_misaligned_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    small_corpus(&corpus, "3");
    let samples = tmp.path().join("s");
    std::fs::create_dir(&samples).unwrap();
    std::fs::copy(corpus.join("tracks/utt0000.csv"), samples.join("utt0000_s00.csv")).unwrap();
    std::fs::copy(corpus.join("tracks/utt0001.csv"), samples.join("other_s00.csv")).unwrap();
    let Sub::Eval(a) =
        parse(&["eval", "--reference", s(&corpus), "--samples", s(&samples), "--out", s(&tmp.path().join("e"))])
    else {
        unreachable!()
    };
    match cmd_eval(&a) {
        Err(ToolError::Usage(msg)) => {
            assert!(msg.contains("other_s00"), "{msg}");
            assert!(msg.contains("utt0001") && msg.contains("utt0002"), "{msg}");
        }
        other => panic!("expected a usage error, got {other:?}"),
    }
}

#[test]
fn sample_names_round_trip() {
    assert_eq!(parse_sample_name("utt0003_s07"), ("utt0003".into(), 7));
    assert_eq!(parse_sample_name("utt0003"), ("utt0003".into(), 0));
    assert_eq!(parse_sample_name("a_sb"), ("a_sb".into(), 0));
}

#[test]
fn zero_sigma_samples_are_identical_across_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    small_corpus(&corpus, "2");
    let run = tmp.path().join("run");
    let Sub::Train(a) =
        parse(&["train", "--corpus", s(&corpus), "--out", s(&run), "--steps", "5", "--checkpoint-every", "5"])
    else {
        unreachable!()
    };
    let summary = cmd_train(&a).unwrap();
    assert_eq!(summary.history.len(), 5);
    for f in ["history.csv", "checkpoint.json", "params.json", "model.json", "train.json", MANIFEST_FILE] {
        assert!(run.join(f).exists(), "{f}");
    }
    let out = tmp.path().join("s");
    let Sub::Sample(a) = parse(&[
        "sample", "--run", s(&run), "--corpus", s(&corpus), "--out", s(&out), "--sigma", "0", "--num-samples", "3",
    ]) else {
        unreachable!()
    };
    assert_eq!(cmd_sample(&a).unwrap(), 6);
    for id in ["utt0000", "utt0001"] {
        let first = std::fs::read(out.join(format!("{id}_s00.csv"))).unwrap();
        for k in 1..3 {
            assert_eq!(std::fs::read(out.join(format!("{id}_s{k:02}.csv"))).unwrap(), first);
        }
    }
}

#[test]
fn config_overrides_flags() {
    let Sub::Train(a) = parse(&["train", "--corpus", "c", "--out", "o", "--steps", "10"]) else {
        unreachable!()
    };
    let b: TrainArgs = apply_overrides(&a, Some(r#"{"steps": 3, "learning-rate": 0.01, "model": "agap"}"#)).unwrap();
    assert_eq!(b.steps, 3);
    assert_eq!(b.learning_rate, 0.01);
    assert_eq!(b.model.model, pflow_toolkit::args::ModelArg::Agap);
    assert!(matches!(apply_overrides(&a, Some(r#"{"stpes": 3}"#)), Err(ToolError::Usage(_))));
    assert!(matches!(apply_overrides(&a, Some("[1]")), Err(ToolError::Usage(_))));

    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("cfg.json");
    std::fs::write(&file, r#"{"utterances": 2, "min_frames": 40, "max_frames": 50}"#).unwrap();
    let Sub::Gen(g) = parse(&["gen", "--out", "x"]) else { unreachable!() };
    let g: GenArgs = apply_overrides(&g, Some(s(&file))).unwrap();
    assert_eq!((g.utterances, g.min_frames, g.max_frames), (2, 40, 50));
}

#[test]
fn autoregressive_with_distance_filler_warns() {
    let Sub::Train(a) = parse(&["train", "--corpus", "c", "--out", "o", "--model", "agap", "--filler", "dtx"]) else {
        unreachable!()
    };
    assert_eq!(a.model.warnings().len(), 1);
    let Sub::Train(b) = parse(&["train", "--corpus", "c", "--out", "o", "--model", "agap"]) else {
        unreachable!()
    };
    assert!(b.model.warnings().is_empty());
}

#[test]
fn check_suites_pass() {
    let report = run_checks(3, &CheckHooks::default()).unwrap();
    let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
    assert!(report.passed, "{failed:?}");
}

#[test]
fn sign_flipped_spline_logdet_is_caught() {
    let hooks = CheckHooks {
        spline_logdet: Box::new(|v| -v),
    };
    let results = logdet_suite(0, &hooks).unwrap();
    let spline: Vec<_> = results.iter().filter(|c| c.name.contains("spline")).collect();
    assert!(!spline.is_empty());
    assert!(spline.iter().any(|c| !c.passed));
    assert!(results.iter().all(|c| c.suite == SUITE_LOGDET));
}

#[test]
fn check_exit_code_on_success() {
    let out = pflow().args(["check", "--seed", "1"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
}
