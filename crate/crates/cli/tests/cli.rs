//! End-to-end runs of the `talkit` binary: exit codes, the generate →
//! train → predict → eval pipeline on a tiny synthetic corpus, environment
//! overrides, reproducibility and the ablation driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use talkit_cli::{EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};
use talkit_core::io::{read_annotations, read_detections, write_detections, MAX_DETECTIONS_PER_VIDEO};
use talkit_core::synth::oracle_detections;

fn talkit(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_talkit"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("TALKIT_") {
            cmd.env_remove(k);
        }
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A run small enough to train in seconds.
fn tiny_config(out: &Path) -> Value {
    json!({
        "seed": 3,
        "output_dir": out,
        "data": {
            "synth": {
                "num_videos": 8,
                "num_classes": 3,
                "duration_range": [40.0, 60.0],
                "long_max": 20.0,
                "sources": [
                    { "name": "slowfast", "dim": 8, "frames_per_clip": 32, "clip_stride_frames": 16 },
                    { "name": "egovlp", "dim": 4, "frames_per_clip": 4, "clip_stride_frames": 4 }
                ]
            },
            "holdout_videos": 3
        },
        "fusion": { "mode": "proj_cat", "proj_dims": { "slowfast": 8, "egovlp": 4 } },
        "model": {
            "max_seq_len": 128,
            "num_levels": 3,
            "embed_dim": 16,
            "num_heads": 2,
            "attention_window": 5,
            "mlp_ratio": 1,
            "regression_ranges": [
                { "min": 0.0, "max": 4.0 },
                { "min": 4.0, "max": 8.0 },
                { "min": 8.0, "max": null }
            ]
        },
        "train": { "epochs": 2, "batch_size": 2, "base_lr": 0.001, "warmup_epochs": 1 }
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = talkit(args, &[]);
    assert_eq!(code(&out), EXIT_OK, "{args:?} failed: {}", stderr(&out));
    out
}

/// Run the full pipeline under `out` and return the detections and report bytes.
fn pipeline(dir: &Path, out: &Path) -> (Vec<u8>, Vec<u8>) {
    let cfg = write_config(dir, "run.json", &tiny_config(out));
    let cfg = cfg.to_str().unwrap();
    run_ok(&["generate", cfg]);
    run_ok(&["train", cfg]);
    run_ok(&["predict", cfg]);
    run_ok(&["eval", cfg]);
    (
        fs::read(out.join("detections.json")).unwrap(),
        fs::read(out.join("eval_report.json")).unwrap(),
    )
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&talkit(&[], &[])), EXIT_USAGE);
    assert_eq!(code(&talkit(&["frobnicate"], &[])), EXIT_USAGE);
    assert_eq!(code(&talkit(&["train"], &[])), EXIT_USAGE);
    assert_eq!(code(&talkit(&["eval", "x.json", "--bogus"], &[])), EXIT_USAGE);
    assert_eq!(code(&talkit(&["--help"], &[])), EXIT_OK);
}

#[test]
fn invalid_configs_exit_1_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = talkit(&["generate", missing.to_str().unwrap()], &[]);
    assert_eq!(code(&out), EXIT_VALIDATION);

    let mut cfg = tiny_config(dir.path());
    cfg["train"]["epoch"] = json!(3);
    let path = write_config(dir.path(), "typo.json", &cfg);
    let out = talkit(&["train", path.to_str().unwrap()], &[]);
    assert_eq!(code(&out), EXIT_VALIDATION);
    assert!(stderr(&out).contains("epoch"), "{}", stderr(&out));

    let path = write_config(dir.path(), "ok.json", &tiny_config(dir.path()));
    let out = talkit(&["generate", path.to_str().unwrap()], &[("TALKIT_TRAIN_EPOCHS", "many")]);
    assert_eq!(code(&out), EXIT_VALIDATION);
    assert!(stderr(&out).contains("train.epochs"), "{}", stderr(&out));

    let out = talkit(&["generate", path.to_str().unwrap()], &[("TALKIT_FUSION_MODE", "sum")]);
    assert_eq!(code(&out), EXIT_VALIDATION);

    // commands whose inputs do not exist yet
    let out = talkit(&["predict", path.to_str().unwrap()], &[]);
    assert_eq!(code(&out), EXIT_VALIDATION, "{}", stderr(&out));
    let out = talkit(&["eval", path.to_str().unwrap()], &[]);
    assert_eq!(code(&out), EXIT_VALIDATION, "{}", stderr(&out));
}

#[test]
fn pipeline_writes_capped_detections_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (dets, report) = pipeline(dir.path(), &out);

    let parsed = read_detections(&out.join("detections.json")).unwrap();
    assert_eq!(parsed.len(), 3);
    assert!(parsed.values().all(|l| l.len() <= MAX_DETECTIONS_PER_VIDEO));
    let report: Value = serde_json::from_slice(&report).unwrap();
    let map = report["average_mAP"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert_eq!(fs::read_dir(out.join("train")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "bin")
    }).count(), 2);

    // the same config in a fresh directory reproduces every artifact
    let dir2 = tempfile::tempdir().unwrap();
    let (dets2, _) = pipeline(dir2.path(), &dir2.path().join("run"));
    assert_eq!(dets, dets2);

    // rerunning commands in place overwrites with identical content
    let cfg = dir.path().join("run.json");
    let cfg = cfg.to_str().unwrap();
    let annotations = fs::read(out.join("data/eval/annotations.json")).unwrap();
    run_ok(&["generate", cfg]);
    assert_eq!(fs::read(out.join("data/eval/annotations.json")).unwrap(), annotations);
    run_ok(&["predict", cfg]);
    assert_eq!(fs::read(out.join("detections.json")).unwrap(), dets);

    // an explicit checkpoint is honored
    let first = out.join("train/epoch_001.json");
    run_ok(&["predict", cfg, "--checkpoint", first.to_str().unwrap()]);
    assert!(out.join("detections.json").is_file());
}

#[test]
fn eval_of_oracle_detections_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "run.json", &tiny_config(&out));
    let cfg = cfg.to_str().unwrap();
    run_ok(&["generate", cfg]);
    let ann = read_annotations(&out.join("data/eval/annotations.json")).unwrap();
    let oracle = dir.path().join("oracle.json");
    write_detections(&oracle, &oracle_detections(&ann.videos), MAX_DETECTIONS_PER_VIDEO).unwrap();
    let res = run_ok(&["eval", cfg, "--detections", oracle.to_str().unwrap()]);
    let text = stdout(&res);
    assert!(text.contains("Average mAP: 100.00"), "{text}");
    assert!(text.contains("Recall@1x (tIoU=0.5): 100.00"), "{text}");
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "run.json", &tiny_config(&out));
    let cfg = cfg.to_str().unwrap();
    run_ok(&["generate", cfg]);
    let res = talkit(&["train", cfg], &[("TALKIT_TRAIN_EPOCHS", "3")]);
    assert_eq!(code(&res), EXIT_OK, "{}", stderr(&res));
    assert!(out.join("train/epoch_003.json").is_file());
    assert!(!out.join("train/epoch_004.json").exists());

    // an override of a nested path and of the output directory
    let other = dir.path().join("elsewhere");
    let res = talkit(
        &["generate", cfg],
        &[("TALKIT_OUTPUT_DIR", other.to_str().unwrap()), ("TALKIT_DATA_HOLDOUT_VIDEOS", "2")],
    );
    assert_eq!(code(&res), EXIT_OK, "{}", stderr(&res));
    let ann = read_annotations(&other.join("data/eval/annotations.json")).unwrap();
    assert_eq!(ann.videos.len(), 2);
}

#[test]
fn ablation_is_deterministic_and_reports_both_modes() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = write_config(dir.path(), "run.json", &tiny_config(&out));
        let res = run_ok(&["ablate", cfg.to_str().unwrap()]);
        assert!(stdout(&res).contains("delta (proj_cat - cat)"));
        for mode in ["cat", "proj_cat"] {
            assert!(out.join("ablate").join(mode).join("eval_report.json").is_file());
        }
        fs::read_to_string(out.join("ablate/summary.json")).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    let summary: Value = serde_json::from_str(&a).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["mode"], "cat");
    assert_eq!(runs[1]["mode"], "proj_cat");
    let delta = runs[1]["average_map"].as_f64().unwrap() - runs[0]["average_map"].as_f64().unwrap();
    assert_eq!(summary["delta_average_map"].as_f64().unwrap(), delta);
}
