//! A short run of the simulation study. The first argument sets the number
//! of replicates (default 20).

use ratemaking::simulator::{run_simulation, SimulationConfig};

fn main() -> ratemaking::Result<()> {
    let replicates = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let config = SimulationConfig {
        replicates,
        ..SimulationConfig::default()
    };
    let report = run_simulation(&config)?;
    println!("{} of {} replicates used", report.replicates_used, report.replicates_requested);
    println!("phi_true  model  mean MSE   var(mean MSE)  mean parameter");
    for s in &report.summaries {
        println!(
            "{:<8}  {:<5}  {:>9.2}  {:>12.3}  {:.4}",
            s.loading,
            s.model.as_str(),
            s.mean_mse,
            s.var_of_mean_mse,
            s.mean_parameter
        );
    }
    report.write_summary_csv(std::io::stdout())?;
    Ok(())
}
