//! Black-box tests over the installed binary: files written, exit codes,
//! error messages.

use std::path::Path;
use std::process::{Command, Output};

fn fedmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedmix"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A config small enough that synth + run stay fast in debug builds.
const SMALL_CONFIG: &str = "\
    data.input_dim = 4\n\
    data.n_train_clients = 12\n\
    data.n_eval_clients = 6\n\
    data.examples_per_client = 6\n\
    data.n_central = 60\n\
    model.hidden_dim = 3\n\
    train.rounds = 3\n\
    train.clients_per_round = 4\n\
    train.local_steps = 2\n\
    train.client_batch_size = 3\n\
    train.eval_every = 1\n\
    mix.n_transfer = 5\n\
    mix.central_steps = 2\n\
    mix.pretrain_steps = 10\n";

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    std::fs::write(&path, SMALL_CONFIG).unwrap();
    path
}

fn synth_into(dir: &Path, config: &Path) -> std::path::PathBuf {
    let data_dir = dir.join("data");
    let out = fedmix(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "synth failed: {}", stderr(&out));
    data_dir
}

#[test]
fn synth_writes_four_data_files_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let data_dir = synth_into(dir.path(), &config);
    for name in [
        "federated.jsonl",
        "central.jsonl",
        "eval.jsonl",
        "oracle_federated.jsonl",
        "manifest.json",
    ] {
        assert!(data_dir.join(name).is_file(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["data.n_central"], "60");
}

#[test]
fn synth_rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let first = synth_into(dir.path(), &config);
    let second_dir = dir.path().join("data2");
    let out = fedmix(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        second_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for name in [
        "federated.jsonl",
        "central.jsonl",
        "eval.jsonl",
        "oracle_federated.jsonl",
    ] {
        let a = std::fs::read(first.join(name)).unwrap();
        let b = std::fs::read(second_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical synth runs");
    }
}

#[test]
fn synth_seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out_dir = dir.path().join("data");
    let out = fedmix(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn synth_rejects_odd_examples_per_client() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.txt");
    std::fs::write(&config, "data.examples_per_client = 21\n").unwrap();
    let out = fedmix(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("data").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.txt");
    std::fs::write(&config, "train.rouns = 5\n").unwrap();
    let out = fedmix(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("data").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("train.rouns"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn run_writes_metrics_model_and_manifest_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let data_dir = synth_into(dir.path(), &config);
    let run_dir = dir.path().join("run");
    let out = fedmix(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data_dir.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--scenario",
        "all",
    ]);
    assert!(out.status.success(), "run failed: {}", stderr(&out));
    // fine_tune stays out of `all` unless asked for
    let mut names: Vec<String> = std::fs::read_dir(&run_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "manifest.json",
            "metrics_example_transfer.csv",
            "metrics_gradient_transfer.csv",
            "metrics_no_mix.csv",
            "metrics_oracle.csv",
            "metrics_parallel.csv",
            "model_example_transfer.bin",
            "model_gradient_transfer.bin",
            "model_no_mix.bin",
            "model_oracle.bin",
            "model_parallel.bin",
        ]
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "run");
    assert_eq!(
        manifest["scenarios"],
        serde_json::json!([
            "no_mix",
            "parallel",
            "example_transfer",
            "gradient_transfer",
            "oracle"
        ])
    );
}

#[test]
fn run_accepts_hyphenated_scenario_names() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let data_dir = synth_into(dir.path(), &config);
    let run_dir = dir.path().join("run");
    let out = fedmix(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data_dir.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--scenario",
        "example-transfer",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(run_dir.join("metrics_example_transfer.csv").is_file());
}

#[test]
fn run_with_missing_central_file_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let data_dir = synth_into(dir.path(), &config);
    std::fs::remove_file(data_dir.join("central.jsonl")).unwrap();
    let out = fedmix(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data_dir.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--scenario",
        "gradient-transfer",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("central.jsonl"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn run_without_central_does_not_need_the_central_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let data_dir = synth_into(dir.path(), &config);
    std::fs::remove_file(data_dir.join("central.jsonl")).unwrap();
    let out = fedmix(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data_dir.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--scenario",
        "no-mix",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn malformed_data_line_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let data_dir = synth_into(dir.path(), &config);
    let fed = data_dir.join("federated.jsonl");
    let mut text = std::fs::read_to_string(&fed).unwrap();
    text.push_str("{\"this is\": \"not a record\"}\n");
    std::fs::write(&fed, text).unwrap();
    let out = fedmix(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data_dir.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--scenario",
        "no-mix",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn gradcheck_passes_for_default_architectures() {
    for args in [
        vec!["gradcheck"],
        vec!["gradcheck", "--arch", "logistic"],
        vec!["gradcheck", "--arch", "mlp", "--activation", "relu"],
    ] {
        let out = fedmix(&args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        assert!(text.contains("max relative error"), "{text}");
    }
}

#[test]
fn gradcheck_degenerate_step_exits_three() {
    let out = fedmix(&["gradcheck", "--eps", "1e-12"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let out = fedmix(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fedmix(&["run"]); // missing required --data/--out
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    let out = fedmix(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("Exit codes"), "{text}");
    let out = fedmix(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
}
