// End-to-end checks of the command-line interface: exit codes, diagnostics,
// artifact naming, and the replay loop, all against the real binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ep-lab"))
        .args(args)
        .env_remove("EP_LAB_OUT")
        .current_dir(dir)
        .output()
        .expect("binary must spawn")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let out = run(dir.path(), &[flag]);
        assert_eq!(out.status.code(), Some(0), "{flag}: {}", stderr(&out));
    }
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train", "--experiment", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("deliberation-single"),
        "should list the valid ids: {}",
        stderr(&out)
    );
}

#[test]
fn missing_config_file_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["train", "--experiment", "deliberation-single", "--config", "/no/such/file.toml"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/no/such/file.toml"), "{}", stderr(&out));
}

#[test]
fn unknown_config_field_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "fooo = 1\n").unwrap();
    let out = run(
        dir.path(),
        &["train", "--experiment", "deliberation-single", "--config", "cfg.toml"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("fooo"), "{}", stderr(&out));
}

#[test]
fn config_syntax_error_carries_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 7\n= nonsense\n").unwrap();
    let out = run(
        dir.path(),
        &["train", "--experiment", "deliberation-single", "--config", "bad.toml"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn zero_episode_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["train", "--experiment", "deliberation-single", "--episodes", "0"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_without_trained_tables_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["eval", "--experiment", "patrol-module"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("patrol-module-ep.qtable"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn train_eval_cross_eval_replay_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = run(d, &["train", "--experiment", "deliberation-single", "--episodes", "300"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for file in [
        "deliberation-single-ep.qtable",
        "deliberation-single-step.qtable",
        "deliberation-single-ep-train.csv",
        "deliberation-single-train-manifest.json",
    ] {
        assert!(d.join(file).exists(), "missing {file}");
    }

    let out = run(
        d,
        &["eval", "--experiment", "deliberation-single", "--episodes", "60", "--format", "csv"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("env,method,episodes,"), "{}", stdout(&out));
    assert!(d.join("deliberation-single-metrics.csv").exists());
    assert!(d.join("deliberation-single-metrics.md").exists());

    let out = run(
        d,
        &["cross-eval", "--experiment", "deliberation-single", "--episodes", "60"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let md = stdout(&out);
    for tag in ["ep->ep", "ep->step", "step->step", "step->ep"] {
        assert!(md.contains(tag), "missing row {tag} in:\n{md}");
    }

    for manifest in [
        "deliberation-single-eval-manifest.json",
        "deliberation-single-cross-eval-manifest.json",
    ] {
        let out = run(
            d,
            &["rerun", "--manifest", manifest, "--out", d.join("replay").to_str().unwrap()],
        );
        assert_eq!(out.status.code(), Some(0), "{manifest}: {}", stderr(&out));
        assert!(stdout(&out).contains("0 mismatched"), "{}", stdout(&out));
    }
}

#[test]
fn trace_render_and_replay_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(
        d,
        &["trace", "--experiment", "patrol-state-d2", "--method", "patch", "--seed", "11"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let trace = "patrol-state-d2-patch-seed11.trace.jsonl";
    assert!(d.join(trace).exists());

    let out = run(
        d,
        &["render", "--trace", trace, "--criterion", "first-interruption", "--panels", "4"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let doc: Vec<_> = fs::read_dir(d)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".txt"))
        .collect();
    assert_eq!(doc.len(), 1, "expected one rendered panel file, got {doc:?}");

    let out = run(
        d,
        &[
            "rerun",
            "--manifest",
            "patrol-state-d2-patch-seed11-trace-manifest.json",
            "--out",
            d.join("replay").to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("0 mismatched"), "{}", stdout(&out));
}

#[test]
fn render_without_matching_event_warns_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("quiet.toml"), "[patrol]\nalarm_prob_per_tick = 0.0\n").unwrap();
    let out = run(
        d,
        &[
            "trace",
            "--experiment",
            "patrol-state-d2",
            "--method",
            "patch",
            "--seed",
            "3",
            "--config",
            "quiet.toml",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = run(
        d,
        &[
            "render",
            "--trace",
            "patrol-state-d2-patch-seed3.trace.jsonl",
            "--criterion",
            "first-interruption",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning: no"), "{}", stderr(&out));
}

#[test]
fn out_dir_falls_back_to_the_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let inner = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_ep-lab"))
        .args(["train", "--experiment", "deliberation-single", "--episodes", "100"])
        .env("EP_LAB_OUT", &inner)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(inner.join("deliberation-single-ep.qtable").exists());
}
