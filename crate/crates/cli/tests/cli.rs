use std::path::Path;
use std::process::{Command, Output};

fn docee(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docee"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn docee")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_synth(dir: &Path) {
    let o = docee(dir, &["--out", "s", "--set", "synth.num_docs=12", "synth"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_train_predict_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_synth(d);
    assert!(d.join("s/corpus.json").is_file());
    assert!(d.join("s/schema.json").is_file());

    let o = docee(d, &["--out", "t", "--set", "train.epochs=2", "train", "s/corpus.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["model.ckpt", "last.ckpt", "metrics.jsonl", "config.json"] {
        assert!(d.join("t").join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(d.join("t/metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"].as_f64().unwrap().is_finite());
    }

    let o = docee(d, &["--out", "p", "predict", "t/model.ckpt", "s/corpus.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("p/predictions.json")).unwrap()).unwrap();
    assert_eq!(preds.as_array().unwrap().len(), 12);

    let o = docee(d, &["--out", "e", "eval", "s/corpus.json", "p/predictions.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("e/report.json")).unwrap()).unwrap();
    assert_eq!(report["docs"], 12);
    assert!(String::from_utf8_lossy(&o.stdout).contains("records"));
}

#[test]
fn corpus_file_is_rejected_as_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_synth(d);
    let o = docee(d, &["--out", "e", "eval", "s/corpus.json", "s/corpus.json"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn seed_flag_controls_generation() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |out: &str, seed: &str| {
        let o = docee(d, &["--out", out, "--seed", seed, "--set", "synth.num_docs=8", "synth"]);
        assert!(o.status.success());
        std::fs::read_to_string(d.join(out).join("corpus.json")).unwrap()
    };
    assert_eq!(run("a", "3"), run("b", "3"));
    assert_ne!(run("a", "3"), run("c", "4"));
}

#[test]
fn config_file_is_layered_under_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_synth(d);
    std::fs::write(d.join("cfg.json"), r#"{"train": {"epochs": 5, "learning_rate": 0.01}}"#).unwrap();
    let o = docee(
        d,
        &[
            "--config",
            "cfg.json",
            "--set",
            "train.epochs=1",
            "--out",
            "t",
            "train",
            "s/corpus.json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("t/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["train"]["epochs"], 1);
    assert_eq!(cfg["train"]["learning_rate"], 0.01);
}

#[test]
fn ablate_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = docee(
        d,
        &[
            "--out",
            "a",
            "--set",
            "synth.num_docs=8",
            "--set",
            "train.epochs=1",
            "ablate",
            "no-graph",
            "git-nt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("a/ablation.json")).unwrap()).unwrap();
    let names: Vec<&str> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["variant"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["full", "no-graph", "git-nt"]);
    assert_eq!(v["rows"][0]["delta"], 0.0);
}

fn assert_failure(o: &Output, code: i32, name: &str) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(o));
    let err = stderr(o);
    let last = err.lines().last().unwrap();
    assert!(last.starts_with(&format!("error: code={name} msg=")), "{last}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_failure(&docee(d, &["frobnicate"]), 2, "usage");
    assert_failure(&docee(d, &["train", "missing.json"]), 3, "io");
    std::fs::write(d.join("bad.json"), "{ nope").unwrap();
    assert_failure(&docee(d, &["train", "bad.json"]), 4, "data");
    assert_failure(&docee(d, &["--set", "train.nope=1", "synth"]), 5, "config");
    assert_failure(&docee(d, &["--set", "train.epochs=0", "synth"]), 5, "config");
    small_synth(d);
    assert_failure(
        &docee(d, &["predict", "s/corpus.json", "s/corpus.json"]),
        6,
        "checkpoint",
    );
    assert_failure(
        &docee(
            d,
            &[
                "--set",
                "train.learning_rate=1e300",
                "--set",
                "train.epochs=3",
                "train",
                "s/corpus.json",
            ],
        ),
        7,
        "diverged",
    );
    assert!(docee(d, &["--help"]).status.success());
    assert!(docee(d, &["--version"]).status.success());
}
