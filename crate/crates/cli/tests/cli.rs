use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn quick_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.json")
}

fn ccpred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccpred"))
        .args(args)
        .env("CCPRED_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ccpred(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit status and the single stderr line of a failing run.
fn fails(args: &[&str]) -> (i32, String) {
    let out = ccpred(args);
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(
        err.trim_end().lines().count(),
        1,
        "stderr is one line: {err:?}"
    );
    (out.status.code().unwrap(), err)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config();
    let (a, b) = (
        dir.path().join("a/train.csid"),
        dir.path().join("b/train.csid"),
    );
    for out in [&a, &b] {
        ok(&[
            "generate",
            "--config",
            s(&cfg),
            "--seed",
            "5",
            "--out",
            s(out),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let log = fs::read_to_string(dir.path().join("a/train.csid.run.json")).unwrap();
    assert_eq!(
        log,
        fs::read_to_string(dir.path().join("b/train.csid.run.json")).unwrap()
    );
    assert!(
        log.contains("\"scenario.seed\": 5") && log.contains("\"train_seed\": 9"),
        "{log}"
    );
    assert!(!dir.path().join("a/.ccpred.lock").exists());

    let c = dir.path().join("c/train.csid");
    ok(&[
        "generate",
        "--config",
        s(&cfg),
        "--seed",
        "6",
        "--out",
        s(&c),
    ]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn staged_commands_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let cfg = quick_config();
    let cfg = s(&cfg);
    ok(&["pipeline", "--config", cfg, "--out-dir", s(&d("all"))]);
    let csv = fs::read_to_string(d("all/results.csv")).unwrap();
    // Four methods at horizons 0..=25 plus the header.
    assert_eq!(csv.lines().count(), 1 + 4 * 26);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d("all/results.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4 * 26);
    assert_eq!(json["perfect_sr"].as_object().unwrap().len(), 26);

    ok(&[
        "generate",
        "--config",
        cfg,
        "--split",
        "train",
        "--out",
        s(&d("s/train.csid")),
    ]);
    ok(&[
        "generate",
        "--config",
        cfg,
        "--split",
        "pred",
        "--out",
        s(&d("s/pred.csid")),
    ]);
    assert_eq!(
        fs::read(d("s/train.csid")).unwrap(),
        fs::read(d("all/train.csid")).unwrap()
    );
    assert_eq!(
        fs::read(d("s/pred.csid")).unwrap(),
        fs::read(d("all/pred.csid")).unwrap()
    );
    ok(&[
        "chart",
        "--config",
        cfg,
        "--train",
        s(&d("s/train.csid")),
        "--out-dir",
        s(&d("s")),
    ]);
    assert_eq!(
        fs::read(d("s/model.fcf")).unwrap(),
        fs::read(d("all/model.fcf")).unwrap()
    );
    ok(&[
        "metrics",
        "--config",
        cfg,
        "--data",
        s(&d("s/pred.csid")),
        "--model",
        s(&d("s/model.fcf")),
        "--out",
        s(&d("s/pred_metrics.csv")),
    ]);
    assert_eq!(
        fs::read(d("s/pred_metrics.csv")).unwrap(),
        fs::read(d("all/pred_metrics.csv")).unwrap()
    );
    ok(&[
        "wiener-fit",
        "--config",
        cfg,
        "--train",
        s(&d("s/train.csid")),
        "--out",
        s(&d("s/filters.wnr")),
    ]);
    assert_eq!(
        fs::read(d("s/filters.wnr")).unwrap(),
        fs::read(d("all/filters.wnr")).unwrap()
    );
    ok(&[
        "evaluate",
        "--config",
        cfg,
        "--train",
        s(&d("s/train.csid")),
        "--pred",
        s(&d("s/pred.csid")),
        "--model",
        s(&d("s/model.fcf")),
        "--filters",
        s(&d("s/filters.wnr")),
        "--out-dir",
        s(&d("s")),
    ]);
    assert_eq!(fs::read_to_string(d("s/results.csv")).unwrap(), csv);
    assert!(d("s/evaluate.run.json").exists() && d("all/pipeline.run.json").exists());

    let report = ok(&["report", "--results", s(&d("s/results.csv"))]);
    let text = String::from_utf8(report.stdout).unwrap();
    assert_eq!(text, fs::read_to_string(d("all/report.txt")).unwrap());
    assert!(text.contains("cc_interp") && text.contains("max excluded fraction"));
}

#[test]
fn evaluate_rejects_memory_longer_than_prediction_set() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let cfg = quick_config();
    let cfg = s(&cfg);
    let small = ["--pred_snapshots", "40", "--memory", "20", "--epochs", "1"];
    let with = |base: &[&str]| -> Vec<String> {
        base.iter().chain(&small).map(|x| x.to_string()).collect()
    };
    let run = |base: &[&str]| {
        let args = with(base);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    };
    run(&["generate", "--config", cfg, "--out", s(&d("train.csid"))]);
    run(&[
        "generate",
        "--config",
        cfg,
        "--split",
        "pred",
        "--out",
        s(&d("pred.csid")),
    ]);
    run(&[
        "chart",
        "--config",
        cfg,
        "--train",
        s(&d("train.csid")),
        "--out-dir",
        s(&d("m")),
    ]);
    run(&[
        "wiener-fit",
        "--config",
        cfg,
        "--train",
        s(&d("train.csid")),
        "--out",
        s(&d("filters.wnr")),
    ]);
    let args = with(&[
        "evaluate",
        "--config",
        cfg,
        "--train",
        s(&d("train.csid")),
        "--pred",
        s(&d("pred.csid")),
        "--model",
        s(&d("m/model.fcf")),
        "--filters",
        s(&d("filters.wnr")),
        "--out-dir",
        s(&d("e")),
    ]);
    let (code, err) = fails(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("K + max horizon"), "{err}");
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csid");
    let (code, err) = fails(&["generate", "--bogus", "--out", s(&out)]);
    assert_eq!(code, 2, "{err}");
    let (code, _) = fails(&["frobnicate"]);
    assert_eq!(code, 2);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"memory\": ").unwrap();
    let (code, err) = fails(&["generate", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(code, 3, "{err}");
    let (code, err) = fails(&["generate", "--memory", "1", "--out", s(&out)]);
    assert_eq!(code, 3, "{err}");
    let (code, err) = fails(&["generate", "--memory", "lots", "--out", s(&out)]);
    assert_eq!(code, 3, "{err}");

    let missing = dir.path().join("missing.csid");
    let (code, err) = fails(&["wiener-fit", "--train", s(&missing), "--out", s(&out)]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("missing.csid"));
    let (code, _) = fails(&["report", "--results", s(&missing)]);
    assert_eq!(code, 4);
    let garbage = dir.path().join("garbage.csid");
    fs::write(&garbage, b"not a dataset").unwrap();
    let (code, _) = fails(&["wiener-fit", "--train", s(&garbage), "--out", s(&out)]);
    assert_eq!(code, 4);
}

#[test]
fn locked_directory_and_bad_thread_cap_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".ccpred.lock"), "1\n").unwrap();
    let out = dir.path().join("t.csid");
    let (code, err) = fails(&[
        "generate",
        "--scenario.num_snapshots",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("locked"), "{err}");
    assert!(!out.exists());

    let status = Command::new(env!("CARGO_BIN_EXE_ccpred"))
        .args(["generate", "--out", s(&dir.path().join("u/t.csid"))])
        .env("CCPRED_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}
