//! End-to-end runs of the `tailflow` binary on tiny problems.

use std::path::Path;
use std::process::{Command, Output};

fn tailflow(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_tailflow")).args(args).output().expect("spawn tailflow");
    assert!(
        out.status.success(),
        "tailflow {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_sample_evaluate_nll() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (train, val, test) = (d.join("train.csv"), d.join("val.csv"), d.join("test.csv"));
    let (model, gen, results) = (d.join("model.tfck"), d.join("gen.csv"), d.join("results.csv"));

    tailflow(&["generate", "--d", "4", "--n-train", "300", "--n-val", "100", "--n-test", "200", "--seed", "3", "--out", path(d)]);
    assert!(train.exists() && val.exists() && test.exists());
    assert!(d.join("test.csv.meta.json").exists());

    let out = tailflow(&[
        "train", "--data", path(&train), "--val", path(&val), "--out", path(&model), "--desk", "--epochs", "20", "--width", "16",
        "--depth", "2", "--embed-pairs", "4",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("wrote"));
    assert!(model.exists());

    tailflow(&["sample", "--model", path(&model), "--n", "200", "--steps", "10", "--seed", "5", "--out", path(&gen)]);
    let first = std::fs::read(&gen).unwrap();
    tailflow(&["sample", "--model", path(&model), "--n", "200", "--steps", "10", "--seed", "5", "--out", path(&gen)]);
    assert_eq!(first, std::fs::read(&gen).unwrap(), "same seed, same sample");
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 201);

    for _ in 0..2 {
        let out = tailflow(&["evaluate", "--gen", path(&gen), "--ref", path(&test), "--results", path(&results)]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("w1_all = "));
    }
    let table = std::fs::read_to_string(&results).unwrap();
    assert_eq!(table.lines().count(), 3, "header plus one row per evaluation:\n{table}");

    let out = tailflow(&["nll", "--model", path(&model), "--data", path(&test), "--probes", "2"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let nll: f64 = text.lines().find_map(|l| l.strip_prefix("nll_per_dim = ")).unwrap().parse().unwrap();
    assert!(nll.is_finite(), "{text}");
}

#[test]
fn bench_from_config_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    std::fs::write(
        &config,
        r#"
name = "tiny"
replications = 2
[data]
copulas = [{ family = "gumbel", tau = 0.5 }]
dims = [3]
alphas = [2.0]
n_train = 200
n_val = 50
n_test = 200
[[methods]]
mode = "adaptive"
steps = 10
[train]
epochs = 10
width = 8
depth = 2
embed_pairs = 2
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    tailflow(&["bench", "--config", path(&config), "--out", path(&out), "--jobs", "2"]);
    for file in ["manifest.json", "runs.csv", "summary.csv", "w1p_table.csv"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);

    let again = tailflow(&["bench", "--config", path(&config), "--out", path(&out), "--jobs", "1"]);
    assert!(!String::from_utf8_lossy(&again.stdout).contains("rep 0:"), "completed runs are not repeated");
    assert_eq!(runs, std::fs::read_to_string(out.join("runs.csv")).unwrap());
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "name = \"x\"\n[data]\ncopulas = [{ family = \"gumbel\", tau = 0.5 }]\ndims = [3]\nalphas = [2.0]\nn_train = 10\nn_val = 5\nn_test = 10\n[[methods]]\nmode = \"sideways\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_tailflow")).args(["bench", "--config", path(&config)]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("methods[0].mode"), "{err}");
}

#[test]
fn verify_exits_cleanly() {
    let out = tailflow(&["verify", "--seed", "1"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed"));
}
