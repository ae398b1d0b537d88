use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rlsyn::cli::{BenchmarkVerdict, RunManifest, RunStatus, EXIT_ACCEPTANCE, EXIT_DIVERGED, EXIT_INVALID};
use rlsyn::datastore::{make_benchmark_dataset, FeatureSchema};
use rlsyn::evalsuite::EvalReport;
use rlsyn::trainer::{read_loss_log, Checkpoint};

fn rlsyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlsyn"))
        .args(args)
        .env("RLSYN_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a small benchmark dataset and its schema; returns (data, schema).
fn dataset(dir: &Path, rows: usize) -> (PathBuf, PathBuf) {
    let (m, s) = make_benchmark_dataset(rows, 1).unwrap();
    let data = dir.join("data.csv");
    let schema = dir.join("schema.json");
    m.write_csv(&data).unwrap();
    s.save(&schema).unwrap();
    (data, schema)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn train(data: &Path, schema: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train", "--profile", "bench-small", "--data", p(data), "--schema", p(schema), "--out",
        p(out), "--iterations", "12", "--seed", "3",
    ];
    args.extend_from_slice(extra);
    rlsyn(&args)
}

#[test]
fn invalid_clip_epsilon_exits_1_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = dataset(dir.path(), 200);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "profile = \"bench-small\"\nclip_epsilon = 1.5\n").unwrap();
    let out = rlsyn(&[
        "train", "--config", p(&cfg), "--data", p(&data), "--schema", p(&schema), "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(code(&out), i32::from(EXIT_INVALID));
    assert!(stderr(&out).contains("clip_epsilon"), "{}", stderr(&out));
}

#[test]
fn every_config_violation_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = dataset(dir.path(), 200);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "clip_epsilon = 0.0\nbatch_size = 0\nlr_gen = -1.0\n").unwrap();
    let out = rlsyn(&[
        "train", "--config", p(&cfg), "--data", p(&data), "--schema", p(&schema), "--out",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(code(&out), i32::from(EXIT_INVALID));
    let err = stderr(&out);
    for field in ["clip_epsilon", "batch_size", "lr_gen"] {
        assert!(err.contains(field), "{field} missing from: {err}");
    }
}

#[test]
fn unknown_profile_and_missing_data_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = dataset(dir.path(), 200);
    let run = dir.path().join("run");
    let out = rlsyn(&[
        "train", "--profile", "nope", "--data", p(&data), "--schema", p(&schema), "--out", p(&run),
    ]);
    assert_eq!(code(&out), i32::from(EXIT_INVALID));
    assert!(stderr(&out).contains("nope"));
    let missing = dir.path().join("missing.csv");
    let out = train(&missing, &schema, &run, &[]);
    assert_eq!(code(&out), i32::from(EXIT_INVALID));
    let m = RunManifest::load(run.join("manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.is_some());
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&rlsyn(&["train"])), i32::from(EXIT_INVALID));
    assert_eq!(code(&rlsyn(&["frobnicate"])), i32::from(EXIT_INVALID));
    assert_eq!(code(&rlsyn(&["--help"])), 0);
}

#[test]
fn rerun_gives_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = dataset(dir.path(), 300);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&data, &schema, out, &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["loss_log.csv", "checkpoint.json", "schema.json", "real_train.csv", "real_test.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(read_loss_log(a.join("loss_log.csv")).unwrap().len(), 12);
    let m = RunManifest::load(a.join("manifest.json")).unwrap();
    assert_eq!(m.status, RunStatus::Succeeded);
    assert!(m.outputs.contains(&a.join("checkpoint.json")));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = dataset(dir.path(), 300);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "profile = \"bench-small\"\ncheckpoint_interval = 5\n").unwrap();
    let run = |out: &Path, iters: &str, resume: bool| {
        let mut args = vec![
            "train", "--config", p(&cfg), "--data", p(&data), "--schema", p(&schema), "--out",
            p(out), "--iterations", iters,
        ];
        if resume {
            args.push("--resume");
        }
        let o = rlsyn(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let full = dir.path().join("full");
    let split = dir.path().join("split");
    run(&full, "15", false);
    run(&split, "10", false);
    run(&split, "15", true);
    for f in ["loss_log.csv", "checkpoint.json"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(split.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn generate_and_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = dataset(dir.path(), 400);
    let run = dir.path().join("run");
    assert_eq!(code(&train(&data, &schema, &run, &[])), 0);
    let ckpt = run.join("checkpoint.json");
    let fitted = run.join("schema.json");

    let syn_train = dir.path().join("syn_train.csv");
    let syn_test = dir.path().join("syn_test.csv");
    let o = rlsyn(&[
        "generate", "--checkpoint", p(&ckpt), "--seed", "1", "--out", p(&syn_train), "--schema",
        p(&fitted),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = rlsyn(&["generate", "--checkpoint", p(&ckpt), "--n", "40", "--seed", "2", "--out", p(&syn_test)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let train_rows = Checkpoint::load(&ckpt).unwrap().train_rows;
    let lines = |f: &Path| fs::read_to_string(f).unwrap().lines().count() - 1;
    assert_eq!(lines(&syn_train), train_rows);
    assert_eq!(lines(&syn_test), 40);
    let m = RunManifest::load(format!("{}.manifest.json", syn_test.display())).unwrap();
    assert_eq!(m.status, RunStatus::Succeeded);

    let eval = dir.path().join("eval");
    let o = rlsyn(&[
        "evaluate", "--real-train", p(&run.join("real_train.csv")), "--real-test",
        p(&run.join("real_test.csv")), "--syn-train", p(&syn_train), "--syn-test", p(&syn_test),
        "--schema", p(&fitted), "--out", p(&eval), "--mia-cap", "100",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = EvalReport::load(eval.join("report.json")).unwrap();
    assert_eq!(report.meta.mia_cap, Some(100));
    assert!(report.privacy.members <= 100);
    assert!(report.utility.is_some());
    for f in ["bigram.csv", "histograms.csv", "pc_scatter.csv", "manifest.json"] {
        assert!(eval.join(f).exists(), "{f}");
    }
}

#[test]
fn generate_rejects_mismatched_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = dataset(dir.path(), 300);
    let run = dir.path().join("run");
    assert_eq!(code(&train(&data, &schema, &run, &[])), 0);
    let mut renamed = FeatureSchema::load(run.join("schema.json")).unwrap();
    renamed.columns[0].name = "renamed".into();
    let other = dir.path().join("other.json");
    renamed.save(&other).unwrap();
    let o = rlsyn(&[
        "generate", "--checkpoint", p(&run.join("checkpoint.json")), "--out",
        p(&dir.path().join("s.csv")), "--schema", p(&other),
    ]);
    assert_eq!(code(&o), i32::from(EXIT_INVALID), "{}", stderr(&o));
    assert!(stderr(&o).contains("schema"), "{}", stderr(&o));
}

#[test]
fn exploding_learning_rate_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = dataset(dir.path(), 300);
    let cfg = dir.path().join("hot.toml");
    fs::write(&cfg, "profile = \"bench-small\"\noptimizer = \"sgd\"\nlr_gen = 1e300\nlr_disc = 1e300\n").unwrap();
    let o = rlsyn(&[
        "train", "--config", p(&cfg), "--data", p(&data), "--schema", p(&schema), "--out",
        p(&dir.path().join("run")), "--iterations", "20",
    ]);
    assert_eq!(code(&o), i32::from(EXIT_DIVERGED), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn short_benchmark_reports_verdict_and_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = rlsyn(&["benchmark", "--seed", "1", "--out", p(&out), "--iterations", "5"]);
    assert_eq!(code(&o), i32::from(EXIT_ACCEPTANCE), "{}", stderr(&o));
    let v: BenchmarkVerdict =
        serde_json::from_str(&fs::read_to_string(out.join("verdict.json")).unwrap()).unwrap();
    assert!(!v.passed);
    assert_eq!(v.iterations, 5);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL ")));
}
