//! End-to-end checks of the binary: every subcommand is a thin adapter, so
//! CLI outputs must reproduce library calls bit-exactly, and seeded runs
//! must be byte-identical.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spreadlearn::data::{generate_synthetic_discrete, FeatureKind, SyntheticDiscreteSpec};
use spreadlearn::estimators::voting_estimate;
use spreadlearn::channels::FlipChannel;
use spreadlearn::experiments::default_feature_map;
use spreadlearn::logreg::train_logistic;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spreadlearn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spreadlearn")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_channels(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("channels.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn write_dataset(dir: &Path) -> PathBuf {
    let spec = SyntheticDiscreteSpec {
        records_per_class: 60,
        informative_dims: 4,
        background_dims: 1,
        num_states: 6,
        sharpness: 1.3,
        retention: 0.7,
        seed: 99,
    };
    let data = generate_synthetic_discrete(&spec).unwrap();
    let path = dir.join("data.csv");
    data.save_csv(&path).unwrap();
    path
}

#[test]
fn corrupt_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let channels = write_channels(
        dir.path(),
        r#"{"label":{"kind":"flip","p_flip":0.2},"features":{"kind":"uniform_state","num_states":6,"p_f":0.3}}"#,
    );
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let res = run(&[
            "corrupt",
            "--data",
            data.to_str().unwrap(),
            "--channels",
            channels.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_ok(&res);
    }
    assert_eq!(
        std::fs::read(&out_a).unwrap(),
        std::fs::read(&out_b).unwrap()
    );
    // A different seed must change the bytes.
    let out_c = dir.path().join("c.csv");
    assert_ok(&run(&[
        "corrupt",
        "--data",
        data.to_str().unwrap(),
        "--channels",
        channels.to_str().unwrap(),
        "--seed",
        "8",
        "--out",
        out_c.to_str().unwrap(),
    ]));
    assert_ne!(
        std::fs::read(&out_a).unwrap(),
        std::fs::read(&out_c).unwrap()
    );
}

#[test]
fn corrupt_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let channels = write_channels(
        dir.path(),
        r#"{"features":{"kind":"uniform_state","num_states":6,"p_f":0.4}}"#,
    );
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    assert_ok(&run(&[
        "corrupt",
        "--data",
        data.to_str().unwrap(),
        "--channels",
        channels.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out_a.to_str().unwrap(),
    ]));
    let res = bin()
        .env("SPREADLEARN_THREADS", "1")
        .args([
            "corrupt",
            "--data",
            data.to_str().unwrap(),
            "--channels",
            channels.to_str().unwrap(),
            "--seed",
            "3",
            "--out",
            out_b.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_ok(&res);
    assert_eq!(
        std::fs::read(&out_a).unwrap(),
        std::fs::read(&out_b).unwrap()
    );
}

#[test]
fn missing_required_flag_exits_one_with_usage() {
    let out = run(&["corrupt", "--data", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "stderr: {stderr}");
}

#[test]
fn missing_input_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let channels = write_channels(dir.path(), r#"{}"#);
    let out = run(&[
        "corrupt",
        "--data",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--channels",
        channels.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        dir.path().join("o.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let channels = write_channels(
        dir.path(),
        r#"{"label":{"kind":"flip","p_flip":0.2}}"#,
    );
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--channels",
        channels.to_str().unwrap(),
        "--num-states",
        "6",
        "--seed",
        "1",
        "--lr",
        "1e300",
        "--iters",
        "10",
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn estimate_reproduces_voting_estimate_for_k2() {
    let dir = tempfile::tempdir().unwrap();
    // f_tilde = 0.38 under p_f = 0.2 inverts to exactly 0.3.
    std::fs::write(dir.path().join("counts.csv"), "state,count\n0,6200\n1,3800\n").unwrap();
    std::fs::write(
        dir.path().join("flip.json"),
        r#"{"kind":"flip","p_flip":0.2}"#,
    )
    .unwrap();
    let out_path = dir.path().join("est.json");
    let res = run(&[
        "estimate",
        "--counts",
        dir.path().join("counts.csv").to_str().unwrap(),
        "--channel",
        dir.path().join("flip.json").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_ok(&res);
    let est: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let theta = est["theta"].as_f64().unwrap();
    let expected = voting_estimate(0.38, &FlipChannel::symmetric(0.2).unwrap())
        .unwrap()
        .theta;
    assert!(
        (theta - expected).abs() < 1e-4,
        "estimate {theta} vs closed form {expected}"
    );
}

#[test]
fn spread_training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let channels = write_channels(
        dir.path(),
        r#"{"label":{"kind":"flip","p_flip":0.2},"features":{"kind":"uniform_state","num_states":6,"p_f":0.2}}"#,
    );
    let noisy = dir.path().join("noisy.csv");
    assert_ok(&run(&[
        "corrupt",
        "--data",
        data.to_str().unwrap(),
        "--channels",
        channels.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        noisy.to_str().unwrap(),
    ]));
    let model_a = dir.path().join("a.json");
    let model_b = dir.path().join("b.json");
    for model in [&model_a, &model_b] {
        assert_ok(&run(&[
            "train",
            "--data",
            noisy.to_str().unwrap(),
            "--channels",
            channels.to_str().unwrap(),
            "--prior",
            "learn",
            "--samples",
            "2",
            "--iters",
            "40",
            "--seed",
            "11",
            "--out",
            model.to_str().unwrap(),
        ]));
    }
    assert_eq!(
        std::fs::read(&model_a).unwrap(),
        std::fs::read(&model_b).unwrap()
    );
}

#[test]
fn clean_train_cli_matches_library_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = write_dataset(dir.path());
    let channels = write_channels(dir.path(), r#"{}"#);
    let model_path = dir.path().join("model.json");
    assert_ok(&run(&[
        "train",
        "--data",
        data_path.to_str().unwrap(),
        "--channels",
        channels.to_str().unwrap(),
        "--num-states",
        "6",
        "--lr",
        "0.2",
        "--iters",
        "80",
        "--seed",
        "0",
        "--out",
        model_path.to_str().unwrap(),
    ]));
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model_path).unwrap()).unwrap();
    let cli_weights: Vec<f64> = model["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();

    let data = spreadlearn::data::load_csv(&data_path, FeatureKind::Discrete { num_states: 6 })
        .unwrap();
    let map = default_feature_map(&data);
    let fit = train_logistic(&data, &map, 0.2, 80).unwrap();
    assert_eq!(cli_weights, fit.weights);
}

#[test]
fn eval_reports_accuracy_on_clean_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let channels = write_channels(dir.path(), r#"{}"#);
    let model = dir.path().join("model.json");
    assert_ok(&run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--channels",
        channels.to_str().unwrap(),
        "--num-states",
        "6",
        "--iters",
        "150",
        "--seed",
        "0",
        "--out",
        model.to_str().unwrap(),
    ]));
    let out = run(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let eval: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let acc = eval["accuracy"].as_f64().unwrap();
    assert!(acc > 0.8 && acc <= 1.0, "accuracy {acc}");
    assert_eq!(eval["records"].as_u64().unwrap(), 120);
}

#[test]
fn analyze_gradient_antithetic_is_exactly_zero() {
    let out = run(&[
        "analyze",
        "noisy-label-grad",
        "--p11",
        "0.8",
        "--p01",
        "0.2",
        "--samples",
        "200000",
        "--seed",
        "4",
        "--antithetic",
    ]);
    assert_ok(&out);
    let est: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(est["mean"].as_f64().unwrap(), 0.0);
}

#[test]
fn analyze_recon_curve_writes_csv_and_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "analyze",
        "recon-curve",
        "--pf",
        "0,0.004",
        "--step",
        "0.05",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(dir.path().join("recon-curve-p0.csv").exists());
    assert!(dir.path().join("recon-curve-p0.004.csv").exists());
    let svg = std::fs::read_to_string(dir.path().join("recon-curves.svg")).unwrap();
    assert!(svg.contains("p_f = 0.004"));
}

#[test]
fn experiment_subcommand_runs_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let cfg = serde_json::json!({
        "dataset": {
            "kind": "synthetic_discrete",
            "train_per_class": 25,
            "test_per_class": 30,
            "informative_dims": 4,
            "background_dims": 1,
            "num_states": 4,
            "sharpness": 1.4,
            "retention": 0.7
        },
        "arms": ["clean-logreg", "noisy-logreg"],
        "sweep": [0.2],
        "label_channel": {"kind": "flip", "p_flip": null},
        "input_channel": {"kind": "uniform_state", "num_states": 4, "p_f": null},
        "repetitions": 2,
        "base_seed": 3,
        "train": {"max_outer_iters": 40},
        "out_dir": out_dir
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = run(&["experiment", "--config", cfg_path.to_str().unwrap()]);
    assert_ok(&out);
    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 4); // header + 2 arms x 2 reps
    assert!(out_dir.join("figures/accuracy-vs-noise.svg").exists());
}
