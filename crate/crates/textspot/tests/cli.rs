//! End-to-end checks of the `textspot` binary: exit codes, error
//! messages, and the smaller subcommand behaviours not covered by the
//! golden-fixture test.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_textspot")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Minimal self-contained run directory: one input file with `records`,
/// a one-image size table, one GT file, and a vocabulary.
fn write_run_dir(dir: &Path, records: &[&str], gt_lines: &str) -> PathBuf {
    fs::write(dir.join("dets.jsonl"), records.join("\n") + "\n").unwrap();
    fs::write(dir.join("sizes.txt"), "img 100\n").unwrap();
    fs::create_dir_all(dir.join("gt")).unwrap();
    fs::write(dir.join("gt/img.txt"), gt_lines).unwrap();
    fs::write(dir.join("vocab.txt"), "hello\n").unwrap();
    let config = dir.join("config.toml");
    fs::write(
        &config,
        r#"
sizes = "sizes.txt"
gt_dir = "gt"
vocabulary = "vocab.txt"

[[inputs]]
path = "dets.jsonl"
model = "pan"
scale = 100.0
"#,
    )
    .unwrap();
    config
}

const DET_PLAIN: &str = r#"{"image_id":"img","polygon":[[0.0,0.0],[10.0,0.0],[10.0,10.0],[0.0,10.0]],"score":0.95,"model":"pan","scale":100.0}"#;
const GT_HELLO: &str = "0,0,10,0,10,10,0,10,hello\n";

#[test]
fn missing_input_file_fails_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_dir(dir.path(), &[DET_PLAIN], GT_HELLO);
    fs::remove_file(dir.path().join("dets.jsonl")).unwrap();
    let out = run(&["fuse", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("dets.jsonl"),
        "stderr should name the missing file: {}",
        stderr(&out)
    );
}

#[test]
fn missing_config_fails() {
    let out = run(&["fuse", "--config", "/nonexistent/config.toml"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/nonexistent/config.toml"));
}

#[test]
fn single_input_fuse_is_passthrough() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_dir(dir.path(), &[DET_PLAIN], GT_HELLO);
    let out = run(&["fuse", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fused = fs::read_to_string(dir.path().join("fused.jsonl")).unwrap();
    assert_eq!(fused.trim(), DET_PLAIN);
}

#[test]
fn detection_task_accepts_transcriptionless_input_but_e2e_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_dir(dir.path(), &[DET_PLAIN], GT_HELLO);
    let cfg = config.to_str().unwrap();
    assert!(run(&["fuse", "--config", cfg]).status.success());

    let out = run(&["eval", "--config", cfg, "--task", "detection"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = String::from_utf8_lossy(&out.stdout).into_owned();
    assert_eq!(summary.trim(), "OOV precision=0.00 recall=0.00 fscore=0.00");
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("task: detection"));

    let out = run(&["eval", "--config", cfg, "--task", "e2e"]);
    assert!(!out.status.success());
    assert!(
        stderr(&out).contains("no transcription"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn empty_ground_truth_yields_all_zero_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_dir(dir.path(), &[DET_PLAIN], GT_HELLO);
    fs::remove_file(dir.path().join("gt/img.txt")).unwrap();
    fs::write(dir.path().join("fused.jsonl"), "").unwrap();
    let out = run(&["eval", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    for split in ["oov", "iv", "all"] {
        for field in ["true_positives", "false_positives", "false_negatives"] {
            assert_eq!(report[split][field], 0, "{split}.{field}");
        }
        assert_eq!(report[split]["fscore"], 0.0);
    }
}

#[test]
fn build_vocab_normalizes_and_skips_dont_care() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_dir(
        dir.path(),
        &[DET_PLAIN],
        "0,0,10,0,10,10,0,10,Hello\n20,0,30,0,30,10,20,10,hello\n40,0,50,0,50,10,40,10,###\n",
    );
    let vocab_out = dir.path().join("built_vocab.txt");
    let out = run(&[
        "build-vocab",
        "--config",
        config.to_str().unwrap(),
        "--out",
        vocab_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&vocab_out).unwrap(), "hello\n");
}

#[test]
fn flag_overrides_change_the_result() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_run_dir(dir.path(), &[DET_PLAIN], GT_HELLO);
    let cfg = config.to_str().unwrap();
    // a 0.95 detection survives the default 0.92 filter but not 0.99
    let out = run(&["fuse", "--config", cfg, "--final-threshold", "0.99"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dir.path().join("fused.jsonl")).unwrap(), "");
}
