mod common;

use std::path::Path;
use std::process::Command;

use common::{fast_trainer, small_arch, tiny_snet};
use nurobust::data::read_results;
use nurobust::experiment::{DatasetSpec, ExperimentConfig, HyperGrid, Method};
use nurobust::robust::RobustConfig;
use nurobust::synthetic::SyntheticConfig;
use nurobust::train::TrainerConfig;

fn bin(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_nurobust"))
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let cfg = ExperimentConfig {
        dataset: DatasetSpec::Synthetic {
            generator: SyntheticConfig::default(),
            n_test: 400,
        },
        methods: vec![Method::Drnet, Method::Nudrnet],
        n: 400,
        seeds: vec![0, 1],
        grid: HyperGrid {
            alpha0: vec![1.0],
            gamma: vec![2.0],
            beta: vec![10.0, 100.0],
        },
        trainer: TrainerConfig {
            max_epochs: 4,
            ..fast_trainer(0)
        },
        robust: RobustConfig {
            min_epochs: 2,
            ..Default::default()
        },
        arch: small_arch(),
        snet_arch: tiny_snet(),
        ..Default::default()
    };
    let p = dir.join("cfg.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn sweep_is_byte_reproducible_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    bin(&["sweep", "--config", &cfg, "--out-dir", a.to_str().unwrap()]);
    bin(&[
        "sweep",
        "--config",
        &cfg,
        "--out-dir",
        b.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    for f in ["results.csv", "grid.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let grid = read_results(a.join("grid.csv")).unwrap();
    let selected = grid.iter().filter(|r| r.metric == "selected" && r.value == 1.0).count();
    // one per method and seed
    assert_eq!(selected, 4);

    let table = bin(&[
        "report",
        "--input",
        a.join("results.csv").to_str().unwrap(),
        "--out-dir",
        a.to_str().unwrap(),
    ]);
    assert!(table.contains("pehe_mse"));
    assert!(a.join("summary.csv").exists());
    assert_eq!(std::fs::read_to_string(a.join("summary.txt")).unwrap(), table);
}

#[test]
fn generate_then_train_one_method_with_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let msg = bin(&[
        "generate",
        "--noise",
        "mn",
        "--n",
        "50",
        "--seed",
        "4",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(msg.contains("50 rows"));
    let csv = std::fs::read_to_string(out.join("synthetic.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.lines().next().unwrap().starts_with("x_0,"));

    bin(&[
        "train",
        "--config",
        &cfg,
        "--method",
        "drnet",
        "--seed",
        "7",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    let rows = read_results(out.join("results.csv")).unwrap();
    assert!(rows.iter().all(|r| r.method == "drnet" && r.seed == 7));
    assert!(out.join("models/drnet_seed7.json").exists());
    assert!(out.join("models/drnet_seed7.params").exists());
}

#[test]
fn bounds_subcommand_writes_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cov.json");
    std::fs::write(&cfg, r#"{"trials": 10, "sigma_draws": 20, "population_n": 20000}"#).unwrap();
    let out = dir.path().join("b");
    let msg = bin(&[
        "bounds",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(msg.starts_with("violations"));
    let trials = std::fs::read_to_string(out.join("coverage_trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 11);
    bin(&[
        "bounds",
        "--kind",
        "linear",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read_to_string(out.join("linear_bound.csv"))
            .unwrap()
            .lines()
            .count(),
        11
    );
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"seeds": [1, 1]}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nurobust"))
        .args([
            "sweep",
            "--config",
            p.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds must be distinct"));
}
