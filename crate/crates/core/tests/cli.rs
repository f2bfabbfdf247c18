use std::path::Path;
use std::process::{Command, Output};

use collapse_lab::data::FieldSchema;
use collapse_lab::engine::write_checkpoint;
use collapse_lab::linalg::Matrix;
use serde_json::{json, Value};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collapse-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    cli(args).status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = json!({
        "data": {"cardinalities": [4, 5, 6, 7], "pattern": {"n_rows": 1500}},
        "model": {"interaction": "dcnv2", "embedding_size": 4, "mlp": [8], "cross_layers": 1},
        "train": {"batch_size": 128, "max_epochs": 2, "lr": 0.003},
        "output_dir": "run"
    });
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn toy_single_step_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    assert_eq!(
        code(&[
            "toy",
            "--d3",
            "3",
            "--steps",
            "1",
            "--seeds",
            "0",
            "--out",
            p(&out)
        ]),
        0
    );
    let summary = read_json(&out.join("toy_summary.json"));
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    assert!(!runs[0]["trajectory"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(out.join("toy_trajectories.csv")).unwrap();
    assert!(csv.starts_with("d3,seed,step,field,ia\n"));
}

#[test]
fn toy_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&["toy", "--d3", "3"]), 2);
    assert_eq!(code(&["toy", "--d3", "0", "--out", p(&out)]), 2);
    assert_eq!(code(&["toy", "--d3", "abc", "--out", p(&out)]), 2);
    assert_eq!(
        code(&["toy", "--d3", "3", "--seeds", "", "--out", p(&out)]),
        2
    );
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn thread_count_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_collapse-lab"))
        .args([
            "toy",
            "--d3",
            "3",
            "--steps",
            "1",
            "--seeds",
            "0",
            "--out",
            p(&dir.path().join("t")),
        ])
        .env("COLLAPSE_LAB_THREADS", "0")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_then_analyze_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert_eq!(code(&["train", "--config", p(&cfg)]), 0);
    let run = dir.path().join("run");
    for f in [
        "run_record.json",
        "collapse_report.json",
        "ia_trajectory.csv",
        "schema.json",
        "config.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let trained = read_json(&run.join("collapse_report.json"));
    assert_eq!(trained["config"]["model"]["embedding_size"], 4);
    assert!(!trained["ia_trajectory"].as_array().unwrap().is_empty());
    assert!(trained["diversity_matrix"].is_array());

    let an = dir.path().join("an");
    let (manifest, schema) = (
        run.join("checkpoint/manifest.json"),
        run.join("schema.json"),
    );
    let args = [
        "analyze",
        "--checkpoint",
        p(&manifest),
        "--schema",
        p(&schema),
        "--out",
        p(&an),
    ];
    assert_eq!(code(&args), 0);
    let analyzed = read_json(&an.join("collapse_report.json"));
    assert_eq!(analyzed["ia_per_field"], trained["ia_per_field"]);
    assert_eq!(analyzed["ia_grid"], trained["ia_grid"]);
    let first = std::fs::read(an.join("collapse_report.json")).unwrap();
    assert_eq!(code(&args), 0);
    assert_eq!(
        first,
        std::fs::read(an.join("collapse_report.json")).unwrap()
    );
    assert!(an.join("ia_grid.csv").exists() && an.join("diversity.csv").exists());
}

#[test]
fn worked_example_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let e1 = Matrix::from_rows(&[[1., 0.], [1., 0.], [0., 1.], [0., 1.]]).unwrap();
    let e2 = Matrix::from_rows(&[[1., 0.], [0., 1.], [1., 0.], [0., 1.]]).unwrap();
    let ckpt = dir.path().join("ckpt");
    let manifest = write_checkpoint(
        &ckpt,
        &[
            ("set0/E_0".into(), e1.clone()),
            ("set0/E_1".into(), e1),
            ("set1/E_0".into(), e2.clone()),
            ("set1/E_1".into(), e2),
        ],
        0,
    )
    .unwrap();
    let schema = dir.path().join("schema.json");
    std::fs::write(
        &schema,
        serde_json::to_string(&FieldSchema::from_cardinalities(&[4, 4]).unwrap()).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        code(&[
            "analyze",
            "--checkpoint",
            p(&manifest),
            "--schema",
            p(&schema),
            "--out",
            p(&out)
        ]),
        0
    );
    let r = read_json(&out.join("collapse_report.json"));
    let f = |v: &Value| v.as_f64().unwrap();
    assert!((f(&r["ia_per_set"][0][0]) - 2.0).abs() < 1e-9);
    assert!((f(&r["ia_per_set"][1][0]) - 2.0).abs() < 1e-9);
    assert!((f(&r["ia_per_field"][0]) - (1.0 + 2f64.sqrt())).abs() < 1e-9);
    assert!((f(&r["mean_diversity"]) - 0.5).abs() < 1e-9);
}

#[test]
fn identity_projections_give_flat_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cards = [6, 7, 8];
    let mut slots = Vec::new();
    for (i, &c) in cards.iter().enumerate() {
        slots.push((
            format!("set0/E_{i}"),
            Matrix::from_fn(c, 3, |r, k| ((r * 7 + k * 3 + i) % 5) as f64 - 2.0),
        ));
        for j in 0..3 {
            slots.push((format!("set0/W_{i}_{j}"), Matrix::identity(3)));
        }
    }
    let manifest = write_checkpoint(dir.path().join("c"), &slots, 0).unwrap();
    let schema = dir.path().join("schema.json");
    std::fs::write(
        &schema,
        serde_json::to_string(&FieldSchema::from_cardinalities(&cards).unwrap()).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(
        code(&[
            "analyze",
            "--checkpoint",
            p(&manifest),
            "--schema",
            p(&schema),
            "--out",
            p(&out)
        ]),
        0
    );
    let r = read_json(&out.join("collapse_report.json"));
    for i in 0..3 {
        let ia = r["ia_per_set"][0][i].as_f64().unwrap();
        for j in 0..3 {
            assert!((r["ia_grid"][0][i][j].as_f64().unwrap() - ia).abs() < 1e-9);
        }
    }
}

#[test]
fn analyze_rejects_mismatched_schema() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_checkpoint(
        dir.path().join("c"),
        &[
            ("set0/E_0".into(), Matrix::identity(3)),
            ("set0/E_1".into(), Matrix::identity(3)),
        ],
        0,
    )
    .unwrap();
    let schema = dir.path().join("schema.json");
    std::fs::write(
        &schema,
        serde_json::to_string(&FieldSchema::from_cardinalities(&[5, 5]).unwrap()).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = cli(&[
        "analyze",
        "--checkpoint",
        p(&manifest),
        "--schema",
        p(&schema),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data error"));
}

#[test]
fn sweep_runs_cells_and_rejects_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("sweep");
    assert_eq!(
        code(&[
            "sweep",
            "--config",
            p(&cfg),
            "--vary",
            "K=2,4",
            "--seeds",
            "0,1",
            "--out",
            p(&out)
        ]),
        0
    );
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.starts_with("cell,model.embedding_size,"));
    assert!(out.join("cells/cell1/seed1/run_record.json").exists());
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["cells"][1]["values"]["model.embedding_size"], 4);

    assert_eq!(
        code(&[
            "sweep",
            "--config",
            p(&cfg),
            "--vary",
            "K=two",
            "--seeds",
            "0",
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(
        code(&[
            "sweep",
            "--config",
            p(&cfg),
            "--vary",
            "model.nope=1",
            "--seeds",
            "0"
        ]),
        2
    );
    assert_eq!(
        code(&["sweep", "--config", p(&cfg), "--vary", "K=2", "--seeds", ""]),
        2
    );
}

#[test]
fn gen_data_writes_csv_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gd");
    let args = [
        "gen-data",
        "--cardinalities",
        "3,4,5,6",
        "--rows",
        "50",
        "--seed",
        "2",
        "--out",
        p(&out),
    ];
    assert_eq!(code(&args), 0);
    let csv = std::fs::read_to_string(out.join("data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(out.join("truth/bank1_field3.txt").exists());
    let first = csv.clone();
    assert_eq!(code(&args), 0);
    assert_eq!(
        first,
        std::fs::read_to_string(out.join("data.csv")).unwrap()
    );
    assert_eq!(
        code(&["gen-data", "--source", "toy", "--d3", "0", "--out", p(&out)]),
        2
    );
}
