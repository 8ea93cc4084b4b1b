//! Expectile regression over a grid of asymmetry levels with sandwich
//! standard errors and a crossing check.

use ratemaking::expectile::{confidence_interval, crossing_violations, expectile_curve, ExpectileOptions};
use ratemaking::simulator::{generate_portfolio, SimulationConfig};

fn main() -> ratemaking::Result<()> {
    let portfolio = generate_portfolio(&SimulationConfig::default(), 0)?;
    let grid = [0.5, 0.75, 0.9, 0.95, 0.99];
    let curve = expectile_curve(&portfolio.design, &portfolio.losses, &grid, &ExpectileOptions::default())?;

    for fit in &curve {
        println!("tau = {}", fit.tau);
        let ci = confidence_interval(fit, 0.05);
        for (j, name) in fit.column_names.iter().enumerate() {
            println!(
                "  {name:<12} {:>9.3}  se {:>7.3}  95% [{:.3}, {:.3}]",
                fit.coefficients[j],
                fit.standard_errors()[j],
                ci[j].0,
                ci[j].1
            );
        }
    }
    println!("crossing violations: {}", crossing_violations(&curve, &portfolio.design));
    Ok(())
}
