//! Empirical check that the sample expectile is coherent for τ ≥ 1/2.

use ratemaking::cli::{coherence_reports, RunConfig};

fn main() -> ratemaking::Result<()> {
    for report in coherence_reports(&RunConfig::default())? {
        println!("tau {} (n = {})", report.tau, report.sample_size);
        for c in &report.checks {
            println!(
                "  {:<28} {:>5} trials  {} violations  worst gap {:.1e}",
                c.axiom, c.trials, c.violations, c.worst_relative_gap
            );
        }
    }
    Ok(())
}
