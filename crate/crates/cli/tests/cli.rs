use std::path::Path;
use std::process::{Command, Output};

fn nbv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbv"))
        .args(args)
        .env_remove("NBV_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nbv(args);
    assert!(
        out.status.success(),
        "nbv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// Small world plus classifier in `dir`.
fn setup(dir: &Path) {
    ok(&["gen-world", "--viewpoints", "200", "--seed", "3", "-o", &path(dir, "world.json")]);
    ok(&[
        "train", "proxy", "--world", &path(dir, "world.json"), "--samples", "800", "--epochs", "3",
        "-o", &path(dir, "clf.json"),
    ]);
}

#[test]
fn gen_world_requires_an_output() {
    let out = nbv(&["gen-world", "--viewpoints", "100"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_world_is_reproducible_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = path(dir.path(), "a.json");
    let b = path(dir.path(), "b.json");
    ok(&["gen-world", "--viewpoints", "120", "--seed", "4", "-o", &a]);
    ok(&["gen-world", "--viewpoints", "120", "--seed", "4", "-o", &b]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.manifest.json")).unwrap()).unwrap();
    assert!(manifest["artifacts"].as_object().unwrap().len() == 1);
}

#[test]
fn bad_world_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n_viewpoints": "many"}"#).unwrap();
    let out = nbv(&["gen-world", "--config", cfg.to_str().unwrap(), "-o", &path(dir.path(), "w.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_viewpoints"));
}

#[test]
fn train_proxy_prints_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-world", "--viewpoints", "200", "--seed", "3", "-o", &path(dir.path(), "world.json")]);
    let stdout = ok(&[
        "train", "proxy", "--world", &path(dir.path(), "world.json"), "--samples", "500", "--epochs", "2",
        "-o", &path(dir.path(), "clf.json"),
    ]);
    assert!(stdout.contains("held-out accuracy"), "{stdout}");
}

#[test]
fn unknown_planner_lists_the_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = nbv(&["eval", "--world", &path(dir.path(), "w.json"), "--planners", "greedy"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for name in ["single_view", "random", "olc_only", "ilc_only", "proposed"] {
        assert!(stderr.contains(name), "{stderr}");
    }
}

#[test]
fn missing_weights_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-world", "--viewpoints", "200", "--seed", "3", "-o", &path(dir.path(), "world.json")]);
    let out = nbv(&[
        "eval", "--world", &path(dir.path(), "world.json"), "--planners", "olc_only", "--episodes", "5",
        "-o", &path(dir.path(), "eval"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("olc_only"));
}

#[test]
fn eval_defaults_to_the_out_dir_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-world", "--viewpoints", "200", "--seed", "3", "-o", &path(dir.path(), "world.json")]);
    let out_dir = dir.path().join("runs");
    let out = Command::new(env!("CARGO_BIN_EXE_nbv"))
        .args(["eval", "--world", &path(dir.path(), "world.json"), "--planners", "random", "--episodes", "5"])
        .env("NBV_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["table.csv", "long.csv", "raw.jsonl", "manifest.json"] {
        assert!(out_dir.join("eval").join(f).exists(), "{f} missing");
    }
}

#[test]
fn inspect_reads_records_and_rejects_bad_indices() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-world", "--viewpoints", "200", "--seed", "3", "-o", &path(dir.path(), "world.json")]);
    ok(&[
        "eval", "--world", &path(dir.path(), "world.json"), "--planners", "random", "--domains", "shift-0.2",
        "--episodes", "4", "-o", &path(dir.path(), "eval"),
    ]);
    let raw = path(dir.path(), "eval/raw.jsonl");

    let text = ok(&["inspect", "--episode", &format!("{raw}:2")]);
    assert!(text.contains("episode 2"), "{text}");
    assert_eq!(text.matches("place belief").count(), 4);

    let csv = ok(&["inspect", "--episode", &format!("{raw}:0"), "--format", "csv"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "episode,t,viewpoint,action_m,place,prob,rrf,final_true_place");
    // 4 steps over 8 places
    assert_eq!(lines.count(), 32);

    for spec in [format!("{raw}:4"), format!("{raw}:x"), raw.clone()] {
        let out = nbv(&["inspect", "--episode", &spec]);
        assert_eq!(out.status.code(), Some(2), "{spec}");
    }
}

#[test]
fn interrupted_training_resumes_to_the_same_weights() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let world = path(dir.path(), "world.json");
    let clf = path(dir.path(), "clf.json");
    let train = |out: &str, extra: &[&str]| {
        let mut args = vec![
            "train", "dqn", "--variant", "proposed", "--world", &world, "--classifier", &clf, "--episodes", "120",
            "--seed", "4", "--checkpoint-every", "25", "-o", out,
        ];
        args.extend_from_slice(extra);
        ok(&args)
    };
    let full = path(dir.path(), "full.json");
    let split = path(dir.path(), "split.json");
    train(&full, &[]);
    let stopped = train(&split, &["--stop-after", "50"]);
    assert!(stopped.contains("stopped after 50"), "{stopped}");
    assert!(!Path::new(&split).exists());
    train(&split, &["--resume"]);
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&split).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("full.log.csv")).unwrap(),
        std::fs::read(dir.path().join("split.log.csv")).unwrap()
    );
}

#[test]
fn non_learned_variant_cannot_be_trained() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-world", "--viewpoints", "200", "--seed", "3", "-o", &path(dir.path(), "world.json")]);
    let out = nbv(&["train", "dqn", "--variant", "random", "--world", &path(dir.path(), "world.json")]);
    assert_eq!(out.status.code(), Some(2));
}
