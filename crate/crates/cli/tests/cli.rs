//! End-to-end runs of the `hydroleak` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# Small, fast pipeline.
sim.cycles = 2
signal.seq_len = 32
model.lstm1 = 8
model.lstm2 = 4
model.dense1 = 8
model.dense2 = 4
train.epochs = 3
detect.max_cycle_samples = 4000
";

fn hydroleak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydroleak"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let out = hydroleak(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}{}",
        stdout(&out),
        stderr(&out)
    );
    stdout(&out)
}

/// Asserts a single machine-readable error line and returns it.
fn failure(args: &[&str], exit: i32, code: &str) -> String {
    let out = hydroleak(args);
    assert_eq!(out.status.code(), Some(exit), "{}", stderr(&out));
    let err = stderr(&out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(
        lines[0].starts_with(&format!("error: code={code} exit={exit}: ")),
        "{err}"
    );
    err
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_small_config(dir: &Path) -> String {
    let cfg = dir.join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    cfg.to_str().unwrap().to_string()
}

/// simulate, dataset, train, eval and detect into `root`.
fn pipeline(root: &Path, cfg: &str) {
    let sim = root.join("sim");
    let data = root.join("data");
    let model = root.join("model");
    let eval = root.join("eval");
    let det = root.join("det");
    let common = ["--config", cfg, "--seed", "5"];
    ok(&[&["simulate"][..], &common, &["--out", path(&sim)]].concat());
    ok(&[
        &["dataset"][..],
        &common,
        &["--input", path(&sim), "--out", path(&data)],
    ]
    .concat());
    ok(&[
        &["train"][..],
        &common,
        &["--data", path(&data), "--out", path(&model)],
    ]
    .concat());
    let model_file = model.join("model.json");
    ok(&[
        &["eval"][..],
        &common,
        &[
            "--model",
            path(&model_file),
            "--data",
            path(&data),
            "--out",
            path(&eval),
        ],
    ]
    .concat());
    let trace = sim.join("trace_high_000.csv");
    ok(&[
        &["detect"][..],
        &common,
        &[
            "--model",
            path(&model_file),
            "--input",
            path(&trace),
            "--out",
            path(&det),
        ],
    ]
    .concat());
}

#[test]
fn help_exits_zero() {
    let text = ok(&["--help"]);
    for cmd in ["simulate", "dataset", "train", "eval", "detect"] {
        assert!(text.contains(cmd));
    }
}

#[test]
fn simulate_is_deterministic_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let first = ok(&[
        "simulate",
        "--classes",
        "all",
        "--cycles",
        "2",
        "--seed",
        "7",
        "--out",
        path(&a),
    ]);
    ok(&[
        "simulate",
        "--classes",
        "all",
        "--cycles",
        "2",
        "--seed",
        "7",
        "--out",
        path(&b),
    ]);
    assert!(first.starts_with("simulate: seed=7 config_digest="));

    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "summary.csv",
            "trace_high_000.csv",
            "trace_low_000.csv",
            "trace_none_000.csv"
        ]
    );
    for name in &names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }

    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    let mean_p1: Vec<f64> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(mean_p1.len(), 3);
    assert!(
        mean_p1[0] > mean_p1[1] && mean_p1[1] > mean_p1[2],
        "{summary}"
    );
}

#[test]
fn zero_cycles_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    failure(
        &["simulate", "--cycles", "0", "--out", path(&out)],
        2,
        "invalid_config",
    );
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "sim.colour = red\n").unwrap();
    let err = failure(
        &[
            "simulate",
            "--config",
            path(&cfg),
            "--out",
            path(dir.path()),
        ],
        2,
        "invalid_config",
    );
    assert!(err.contains("sim.colour"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    failure(&["simulate", "--no-such-flag"], 2, "usage");
    failure(&["train"], 2, "usage");
}

#[test]
fn missing_upstream_artifact() {
    let dir = tempfile::tempdir().unwrap();
    failure(
        &[
            "train",
            "--data",
            path(&dir.path().join("nothing")),
            "--out",
            path(dir.path()),
        ],
        3,
        "incompatible_artifacts",
    );
}

#[test]
fn sequence_length_mismatch_is_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let sim = dir.path().join("sim");
    let data = dir.path().join("data");
    ok(&["simulate", "--config", &cfg, "--out", path(&sim)]);
    ok(&[
        "dataset",
        "--config",
        &cfg,
        "--input",
        path(&sim),
        "--out",
        path(&data),
    ]);
    let err = failure(
        &[
            "train",
            "--config",
            &cfg,
            "--set",
            "signal.seq_len=40",
            "--data",
            path(&data),
            "--out",
            path(dir.path()),
        ],
        3,
        "incompatible_artifacts",
    );
    assert!(err.contains("32") && err.contains("40"), "{err}");
}

#[test]
fn eval_reproduces_reference_f1_from_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/leak_confusion_reference.csv"
    );
    let text = ok(&["eval", "--confusion", fixture, "--out", path(dir.path())]);
    assert!(text.contains("f1=0.940409"), "{text}");
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
    let f1: Vec<f64> = metrics["per_class"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["f1"].as_f64().unwrap())
        .collect();
    for (got, want) in f1.iter().zip([0.9404, 0.964446, 0.999190]) {
        assert!((got - want).abs() <= 5e-4, "{got} vs {want}");
    }
    let confusion = fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    let rows: Vec<&str> = confusion.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows, ["3890,131,0", "362,6768,4", "0,2,3701"]);
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    pipeline(&a, &cfg);
    pipeline(&b, &cfg);

    let value_files = [
        "sim/summary.csv",
        "sim/trace_none_000.csv",
        "data/train.csv",
        "data/test.csv",
        "data/dataset.json",
        "data/peaks.csv",
        "model/model.json",
        "model/history.csv",
        "eval/metrics.json",
        "eval/confusion.csv",
        "eval/predictions.csv",
        "eval/pr_none.csv",
        "eval/pr_low.csv",
        "eval/pr_high.csv",
        "det/detections.csv",
    ];
    for f in value_files {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let history = fs::read_to_string(a.join("model/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(history.starts_with("epoch,train_loss,train_acc,val_loss,val_acc"));

    let detections = fs::read_to_string(a.join("det/detections.csv")).unwrap();
    assert_eq!(detections.lines().count(), 1 + 4);
    let latency: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("det/latency.json")).unwrap()).unwrap();
    assert_eq!(latency["report"]["count"], 4);
    assert!(latency["within_budget"].is_boolean());
}

#[test]
fn detect_realtime_pacing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    pipeline(dir.path(), &cfg);
    let model = dir.path().join("model/model.json");
    let trace = dir.path().join("one.csv");
    ok(&[
        "simulate",
        "--config",
        &cfg,
        "--cycles",
        "1",
        "--classes",
        "low",
        "--out",
        path(&dir.path().join("one")),
    ]);
    fs::copy(dir.path().join("one/trace_low_000.csv"), &trace).unwrap();
    let started = std::time::Instant::now();
    let text = ok(&[
        "detect",
        "--config",
        &cfg,
        "--model",
        path(&model),
        "--input",
        path(&trace),
        "--pace",
        "realtime",
        "--threaded",
        "--out",
        path(&dir.path().join("rt")),
    ]);
    // One round trip takes well over a second of simulated time.
    assert!(started.elapsed().as_secs_f64() > 1.0);
    assert!(text.contains("cycles=2"), "{text}");
    let lines = fs::read_to_string(dir.path().join("rt/detections.jsonl")).unwrap();
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["latency_us"].as_f64().unwrap() > 0.0);
    }
}
