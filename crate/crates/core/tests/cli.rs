use std::path::Path;
use std::process::Command;

use ratemaking::cli::{self, DatasetConfig, FactorConfig, RateReport, RunConfig};
use ratemaking::data::{write_policies, Schema};
use ratemaking::evaluation::GiniMatrix;
use ratemaking::simulator::{generate_portfolio, SimulationConfig};
use ratemaking::RatemakingError;

const BIN: &str = env!("CARGO_BIN_EXE_ratemaking");

fn synthetic(dir: &Path, seed: u64) -> RunConfig {
    let sim = SimulationConfig {
        n_policies: 2000,
        master_seed: seed,
        ..SimulationConfig::default()
    };
    let portfolio = generate_portfolio(&sim, 0).unwrap();
    let schema = Schema::with_factors(["x1", "x2", "x3"]);
    let data = dir.join("policies.csv");
    write_policies(&portfolio.to_records(), &schema, std::fs::File::create(&data).unwrap()).unwrap();
    RunConfig {
        dataset: Some(DatasetConfig { path: data, schema }),
        factors: ["x1", "x2", "x3"]
            .iter()
            .map(|f| FactorConfig {
                name: f.to_string(),
                reference: "0".into(),
                levels: None,
            })
            .collect(),
        target_total: Some(portfolio.target_total(0.1)),
        expectile_grid: vec![0.5, 0.95],
        output_dir: dir.join("out"),
        ..RunConfig::default()
    }
}

fn write_config(dir: &Path, config: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    path
}

#[test]
fn fit_emits_five_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic(dir.path(), 1);
    cli::cmd_fit(&config).unwrap();
    for f in ["glm.json", "expectile.json", "qr.json", "pqr.json", "qrii.json"] {
        assert!(config.output_dir.join(f).is_file(), "{f} missing");
    }
    let manifest: cli::Manifest =
        serde_json::from_slice(&std::fs::read(config.output_dir.join("fit.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, config.seed);
    assert!(manifest.outputs.iter().any(|o| o.file == "expectile_curve.csv"));
}

#[test]
fn pure_total_target_gives_zero_linear_loadings() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic(dir.path(), 2);
    config.principles.retain(|p| p.as_str() != "TSQPP");
    cli::cmd_fit(&config).unwrap();
    let case = cli::CaseData::load(&config).unwrap();
    let first = cli::rate(&config, &case).unwrap();
    config.target_total = Some(first.pure_total);
    let report: RateReport = cli::rate(&config, &case).unwrap();
    assert_eq!(report.allocations.len(), 5);
    for a in &report.allocations {
        assert!(a.parameter.abs() < 1e-12, "{} loading {}", a.principle, a.parameter);
    }
}

#[test]
fn missing_dataset_exits_with_code_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic(dir.path(), 3);
    let missing = dir.path().join("nowhere/dataCar.csv");
    config.dataset.as_mut().unwrap().path = missing.clone();
    let path = write_config(dir.path(), &config);
    let out = Command::new(BIN).args(["fit", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&missing.display().to_string()), "{stderr}");
    assert!(matches!(cli::cmd_fit(&config), Err(RatemakingError::Config(_))));
}

#[test]
fn unbracketed_target_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic(dir.path(), 4);
    let path = write_config(dir.path(), &config);
    let fit = Command::new(BIN).args(["fit", "--config"]).arg(&path).output().unwrap();
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let rate = Command::new(BIN)
        .args(["rate", "--total-premium", "1", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(rate.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&rate.stderr).contains("not bracketed"));
}

#[test]
fn bad_tau_is_a_config_error() {
    let out = Command::new(BIN).args(["coherence", "--tau", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_emits_one_summary_row_per_loading_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic(dir.path(), 5);
    config.simulation = SimulationConfig {
        n_policies: 600,
        replicates: 2,
        loadings: vec![0.02, 0.05, 0.10, 0.15],
        ..SimulationConfig::default()
    };
    cli::cmd_simulate(&config).unwrap();
    let summary = std::fs::read_to_string(config.output_dir.join("simulation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4 * 4);
}

/// Split count moves the standard errors, not the means beyond sampling noise.
#[test]
fn split_count_changes_se_not_means() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = synthetic(dir.path(), 6);
    config.drop_infeasible = true;
    cli::cmd_fit(&config).unwrap();
    cli::cmd_rate(&config).unwrap();
    let mut matrices = Vec::new();
    for splits in [10, 40] {
        config.gini.n_splits = splits;
        cli::cmd_gini(&config).unwrap();
        let g: serde_json::Value =
            serde_json::from_slice(&std::fs::read(config.output_dir.join("gini.json")).unwrap()).unwrap();
        let m: GiniMatrix = serde_json::from_value(g["matrix"].clone()).unwrap();
        matrices.push(m);
    }
    let (a, b) = (&matrices[0], &matrices[1]);
    assert_ne!(a.se, b.se);
    for i in 0..a.models.len() {
        for j in 0..a.models.len() {
            let noise = (a.se[i][j].powi(2) + b.se[i][j].powi(2)).sqrt();
            assert!((a.mean[i][j] - b.mean[i][j]).abs() <= 4.0 * noise + 1e-12, "cell ({i}, {j})");
        }
    }
}
