//! End-to-end subcommand tests against the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn wassl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wassl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

const UNIT_GROUPING: &str = r#"{
    "classes": [{"name": "a", "group": 1}, {"name": "b", "group": 1}],
    "weights": {"1": 1.0}
}"#;

const FOUR_GROUPS: &str = r#"{
    "classes": [
        {"name": "sky", "group": 1},
        {"name": "building", "group": 2},
        {"name": "road", "group": 3},
        {"name": "car", "group": 4},
        {"name": "person", "group": 4}
    ]
}"#;

const FIG1_MATRIX: &str = r#"{
    "n": 3,
    "class_names": ["car", "bus", "road"],
    "entries": [[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]]
}"#;

#[test]
fn build_matrix_unit_grouping_gives_zero_one_costs() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("g.json"), UNIT_GROUPING);
    let output = wassl(
        dir.path(),
        &["build-matrix", "--grouping", "g.json", "--out", "d.json"],
    );
    assert!(output.status.success());
    let file: serde_json::Value = serde_json::from_str(&read(&dir.path().join("d.json"))).unwrap();
    assert_eq!(file["n"], 2);
    assert_eq!(file["entries"], serde_json::json!([[0.0, 1.0], [1.0, 0.0]]));
}

#[test]
fn build_matrix_default_weights_squared() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("g.json"), FOUR_GROUPS);
    let output = wassl(
        dir.path(),
        &[
            "build-matrix",
            "--grouping",
            "g.json",
            "--metric",
            "power:2",
            "--out",
            "d.json",
        ],
    );
    assert!(output.status.success());
    let file: serde_json::Value = serde_json::from_str(&read(&dir.path().join("d.json"))).unwrap();
    let entries = file["entries"].as_array().unwrap();
    for (i, row) in entries.iter().enumerate() {
        for (j, cell) in row.as_array().unwrap().iter().enumerate() {
            let v = cell.as_f64().unwrap();
            if i == j {
                assert_eq!(v, 0.0);
            } else {
                assert!(
                    [1.0, 4.0, 9.0, 16.0].contains(&v),
                    "off-diagonal {v} not a squared default weight"
                );
            }
        }
    }
}

#[test]
fn build_matrix_rejects_malformed_json_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("g.json"), "{not json");
    let output = wassl(
        dir.path(),
        &["build-matrix", "--grouping", "g.json", "--out", "d.json"],
    );
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("json") || stderr.contains("expected"),
        "stderr: {stderr}"
    );
}

#[test]
fn loss_eval_onehot_prediction_has_zero_loss() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), FIG1_MATRIX);
    let output = wassl(
        dir.path(),
        &[
            "loss-eval",
            "--s",
            "1,0,0",
            "--target",
            "onehot:0",
            "--matrix",
            "d.json",
            "--loss",
            "wasserstein",
        ],
    );
    let json = stdout_json(&output);
    assert_eq!(json["results"][0]["result"]["loss"], 0.0);
}

#[test]
fn loss_eval_comparison_shows_equal_ce_but_ordered_wasserstein() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), FIG1_MATRIX);
    let output = wassl(
        dir.path(),
        &[
            "loss-eval",
            "--s",
            "0.5,0.4,0.1",
            "--s2",
            "0.5,0.1,0.4",
            "--target",
            "onehot:0",
            "--matrix",
            "d.json",
            "--loss",
            "wasserstein",
        ],
    );
    let json = stdout_json(&output);
    let ce_a = json["results"][0]["ce"].as_f64().unwrap();
    let ce_b = json["results"][1]["ce"].as_f64().unwrap();
    assert!((ce_a - ce_b).abs() <= 1e-12);
    let w_a = json["results"][0]["result"]["loss"].as_f64().unwrap();
    let w_b = json["results"][1]["result"]["loss"].as_f64().unwrap();
    assert!(w_b > w_a, "expected ordering, got {w_a} vs {w_b}");
}

#[test]
fn loss_eval_oracle_gap_is_tiny_for_onehot_targets() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), FIG1_MATRIX);
    let output = wassl(
        dir.path(),
        &[
            "loss-eval",
            "--s",
            "0.2,0.5,0.3",
            "--target",
            "onehot:1",
            "--matrix",
            "d.json",
            "--loss",
            "wasserstein",
            "--oracle",
        ],
    );
    let json = stdout_json(&output);
    let gap = json["results"][0]["oracle_gap"].as_f64().unwrap();
    assert!(gap <= 1e-9, "oracle gap {gap}");
}

#[test]
fn loss_eval_sinkhorn_on_smoothed_target_reports_iterations() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), FIG1_MATRIX);
    let output = wassl(
        dir.path(),
        &[
            "loss-eval",
            "--s",
            "0.2,0.5,0.3",
            "--target",
            "onehot:1",
            "--smooth",
            "0.2",
            "--matrix",
            "d.json",
            "--loss",
            "sinkhorn",
            "--epsilon",
            "0.05",
            "--max-iter",
            "5000",
        ],
    );
    let json = stdout_json(&output);
    let result = &json["results"][0]["result"];
    assert!(result["loss"].as_f64().unwrap() > 0.0);
    assert!(result["iterations"].as_u64().unwrap() >= 1);
    assert!(result["marginal_residual"].as_f64().unwrap() <= 1e-6);
}

const TRAIN_MATRIX: &str = r#"{
    "n": 3,
    "class_names": ["left", "right", "critical"],
    "entries": [[0.0, 1.0, 4.0], [1.0, 0.0, 4.0], [4.0, 4.0, 0.0]]
}"#;

fn train_config() -> String {
    String::from(
        r#"{
            "loss": {"kind": "wasserstein", "matrix": "d.json"},
            "learning_rate": 0.4,
            "epochs": 5,
            "seed": 3,
            "scene": {
                "num_classes": 3,
                "feature_dim": 2,
                "class_means": [[-1.0, 0.0], [1.0, 0.0], [0.0, 0.8]],
                "noise_scale": 1.0,
                "frequencies": [0.4, 0.3, 0.3],
                "pixels": {"train": 80, "val": 30, "test": 50},
                "seed": 3
            }
        }"#,
    )
}

fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|line| !line.contains("generated_at"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn train_runs_are_byte_identical_modulo_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), TRAIN_MATRIX);
    write(&dir.path().join("cfg.json"), &train_config());

    for out in ["run1", "run2"] {
        let output = wassl(
            dir.path(),
            &["--out-dir", out, "--quiet", "train", "--config", "cfg.json"],
        );
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let a = dir.path().join("run1");
    let b = dir.path().join("run2");
    assert_eq!(read(&a.join("model.json")), read(&b.join("model.json")));
    assert_eq!(
        read(&a.join("train_stats.jsonl")),
        read(&b.join("train_stats.jsonl"))
    );
    assert_eq!(
        strip_timestamp(&read(&a.join("eval_report.json"))),
        strip_timestamp(&read(&b.join("eval_report.json")))
    );

    let stats = read(&a.join("train_stats.jsonl"));
    assert_eq!(stats.lines().count(), 5); // one line per epoch
    let first: serde_json::Value = serde_json::from_str(stats.lines().next().unwrap()).unwrap();
    assert!(first["train_loss"].as_f64().is_some());
    assert!(first["val_severity_error"].as_f64().is_some());
}

#[test]
fn train_missing_dataset_path_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), TRAIN_MATRIX);
    write(
        &dir.path().join("cfg.json"),
        r#"{
            "loss": {"kind": "wasserstein", "matrix": "d.json"},
            "learning_rate": 0.4,
            "epochs": 5,
            "dataset": "no_such_dataset.json"
        }"#,
    );
    let output = wassl(dir.path(), &["train", "--config", "cfg.json"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn train_seed_sweep_writes_a_severity_summary() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), TRAIN_MATRIX);
    write(&dir.path().join("cfg.json"), &train_config());
    let output = wassl(
        dir.path(),
        &[
            "--quiet", "train", "--config", "cfg.json", "--seeds", "0..2",
        ],
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("severity_summary.json"))).unwrap();
    assert_eq!(summary["baseline"], "ce");
    assert_eq!(summary["comparison"], "wasserstein");
    assert_eq!(summary["seeds"], serde_json::json!([0, 1, 2]));
    assert_eq!(summary["total"], 3);
    assert_eq!(
        summary["baseline_severity_error"].as_array().unwrap().len(),
        3
    );
}

#[test]
fn train_divergence_exits_3_with_the_failing_epoch() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), TRAIN_MATRIX);
    let config = train_config().replace(
        "\"learning_rate\": 0.4",
        "\"learning_rate\": 1.7976931348623157e308",
    );
    write(&dir.path().join("cfg.json"), &config);
    let output = wassl(dir.path(), &["--quiet", "train", "--config", "cfg.json"]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("epoch"), "stderr: {stderr}");
}

#[test]
fn train_warm_start_resumes_from_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), TRAIN_MATRIX);
    write(&dir.path().join("cfg.json"), &train_config());

    let output = wassl(
        dir.path(),
        &[
            "--out-dir",
            "first",
            "--quiet",
            "train",
            "--config",
            "cfg.json",
        ],
    );
    assert!(output.status.success());
    let output = wassl(
        dir.path(),
        &[
            "--out-dir",
            "second",
            "--quiet",
            "train",
            "--config",
            "cfg.json",
            "--warm-start",
            "first/model.json",
        ],
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert_ne!(
        read(&dir.path().join("first/model.json")),
        read(&dir.path().join("second/model.json"))
    );
}

#[test]
fn evaluate_writes_a_report_with_group_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), TRAIN_MATRIX);
    write(
        &dir.path().join("g.json"),
        r#"{
            "classes": [
                {"name": "left", "group": 1},
                {"name": "right", "group": 1},
                {"name": "critical", "group": 2}
            ],
            "weights": {"1": 1.0, "2": 4.0}
        }"#,
    );

    // Fabricate a dataset and an untrained model through the library.
    let scene = wassl::trainer::generate_scene(&wassl::trainer::SyntheticSceneConfig {
        num_classes: 3,
        feature_dim: 2,
        class_means: vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.8]],
        noise_scale: 1.0,
        frequencies: vec![0.4, 0.3, 0.3],
        pixels: wassl::trainer::SplitSizes {
            train: 30,
            val: 20,
            test: 40,
        },
        seed: 7,
    })
    .unwrap();
    scene.write_json_file(dir.path().join("data.json")).unwrap();
    let model = wassl::trainer::SoftmaxModel::init(3, 2, 7);
    model
        .write_json_file(dir.path().join("model.json"))
        .unwrap();

    let output = wassl(
        dir.path(),
        &[
            "evaluate",
            "--model",
            "model.json",
            "--dataset",
            "data.json",
            "--matrix",
            "d.json",
            "--grouping",
            "g.json",
            "--out",
            "report.json",
        ],
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("report.json"))).unwrap();
    assert_eq!(report["source"], "test");
    assert_eq!(report["num_classes"], 3);
    assert!(report["generated_at"].is_string());
    assert!(report["group_iou"].is_object());
    assert!(report["severity_error"].as_f64().unwrap() >= 0.0);
    let table = String::from_utf8_lossy(&output.stdout);
    assert!(table.contains("miou"), "table: {table}");
    assert!(table.contains("critical"));
}

#[test]
fn evaluate_scores_hand_authored_csv_maps() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("truths.csv"), "0, 0, 255\n1, 1, 1\n");
    write(&dir.path().join("preds.csv"), "0, 1, 0\n1, 1, 1\n");
    let output = wassl(
        dir.path(),
        &[
            "--quiet",
            "evaluate",
            "--truths",
            "truths.csv",
            "--preds",
            "preds.csv",
            "--classes",
            "2",
            "--out",
            "report.json",
        ],
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("report.json"))).unwrap();
    assert_eq!(report["source"], "maps");
    // 5 scored pixels (one ignored), one miss out of five.
    assert_eq!(report["scored_pixels"], 5);
    assert_eq!(report["severity_error"].as_f64().unwrap(), 0.2);
    assert_eq!(report["iou_per_class"][0].as_f64().unwrap(), 0.5);
    assert_eq!(report["iou_per_class"][1].as_f64().unwrap(), 0.75);
}

#[test]
fn loss_eval_reports_the_post_hoc_root_on_request() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("d.json"), FIG1_MATRIX);
    let output = wassl(
        dir.path(),
        &[
            "loss-eval",
            "--s",
            "0,1,0",
            "--target",
            "onehot:0",
            "--matrix",
            "d.json",
            "--metric",
            "power:2",
            "--root-normalize",
        ],
    );
    let json = stdout_json(&output);
    let loss = json["results"][0]["result"]["loss"].as_f64().unwrap();
    assert_eq!(loss, 1.0); // D[1][0]^2 = 1
    assert_eq!(json["results"][0]["root_normalized"].as_f64().unwrap(), 1.0);

    // And with mass on the far class the root undoes the square.
    let output = wassl(
        dir.path(),
        &[
            "loss-eval",
            "--s",
            "0,0,1",
            "--target",
            "onehot:0",
            "--matrix",
            "d.json",
            "--metric",
            "power:2",
            "--root-normalize",
        ],
    );
    let json = stdout_json(&output);
    assert_eq!(json["results"][0]["result"]["loss"].as_f64().unwrap(), 16.0);
    assert_eq!(json["results"][0]["root_normalized"].as_f64().unwrap(), 4.0);
}

#[test]
fn bench_single_repetition_produces_a_complete_table() {
    let dir = tempfile::tempdir().unwrap();
    let output = wassl(
        dir.path(),
        &[
            "bench",
            "--sizes",
            "4,128",
            "--repetitions",
            "1",
            "--out",
            "bench.csv",
        ],
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let csv = read(&dir.path().join("bench.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,op,repetitions,median_ns,status");
    assert_eq!(lines.len(), 1 + 2 * 3); // two sizes, three ops
    assert!(csv.contains("4,onehot_loss,1"));
    assert!(csv.contains("128,exact_lp_loss,1,,skipped"));
    assert!(!csv.contains("4,exact_lp_loss,1,,skipped"));
}

#[test]
fn bench_rejects_undersized_bins() {
    let dir = tempfile::tempdir().unwrap();
    let output = wassl(dir.path(), &["bench", "--sizes", "1,16"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn grad_check_passes_for_each_exact_loss() {
    let dir = tempfile::tempdir().unwrap();
    for loss in ["ce", "wasserstein", "l1"] {
        let output = wassl(dir.path(), &["grad-check", "--loss", loss]);
        let json = stdout_json(&output);
        assert_eq!(json["pass"], true, "{loss} failed: {json}");
        assert!(json["max_relative_error"].as_f64().unwrap() <= 1e-4);
    }
}

#[test]
fn grad_check_rejects_sinkhorn() {
    let dir = tempfile::tempdir().unwrap();
    let output = wassl(dir.path(), &["grad-check", "--loss", "sinkhorn"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_subcommands_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = wassl(dir.path(), &["frobnicate"]);
    assert_eq!(output.status.code(), Some(2));
}
