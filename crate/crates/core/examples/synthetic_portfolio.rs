//! Writes a synthetic three-factor portfolio and a matching run configuration.
//!
//! ```text
//! cargo run --release --example synthetic_portfolio -- /tmp/demo
//! cargo run --release --bin ratemaking -- fit --config /tmp/demo/config.json
//! cargo run --release --bin ratemaking -- rate --config /tmp/demo/config.json
//! cargo run --release --bin ratemaking -- gini --config /tmp/demo/config.json
//! ```

use std::fs::File;
use std::path::PathBuf;

use ratemaking::cli::{DatasetConfig, FactorConfig, RunConfig};
use ratemaking::data::{write_policies, Schema};
use ratemaking::simulator::{generate_portfolio, SimulationConfig};

fn main() -> ratemaking::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()));
    std::fs::create_dir_all(&dir)?;

    let sim = SimulationConfig {
        n_policies: 4000,
        ..SimulationConfig::default()
    };
    let portfolio = generate_portfolio(&sim, 0)?;
    let records = portfolio.to_records();
    let schema = Schema::with_factors(["x1", "x2", "x3"]);
    write_policies(&records, &schema, File::create(dir.join("policies.csv"))?)?;

    let config = RunConfig {
        dataset: Some(DatasetConfig {
            path: "policies.csv".into(),
            schema,
        }),
        factors: ["x1", "x2", "x3"]
            .iter()
            .map(|name| FactorConfig {
                name: name.to_string(),
                reference: "0".into(),
                levels: Some(vec!["0".into(), "1".into()]),
            })
            .collect(),
        target_total: Some(portfolio.target_total(0.10)),
        output_dir: dir.join("out"),
        ..RunConfig::default()
    };
    serde_json::to_writer_pretty(File::create(dir.join("config.json"))?, &config)?;
    println!("{} policies, target total {:.2}", records.len(), config.target_total.unwrap_or_default());
    println!("config written to {}", dir.join("config.json").display());
    Ok(())
}
