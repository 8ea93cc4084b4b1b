//! Ordered Lorenz curves and the mini-max Gini selection on a simulated
//! portfolio priced by three competing premium vectors.

use ratemaking::evaluation::{gini_index, gini_matrix, ordered_lorenz, GiniOptions};
use ratemaking::simulator::{generate_portfolio, SimulationConfig};

fn main() -> ratemaking::Result<()> {
    let portfolio = generate_portfolio(&SimulationConfig::default(), 1)?;
    let flat = vec![portfolio.losses.iter().sum::<f64>() / portfolio.losses.len() as f64; portfolio.losses.len()];
    // true means, and true means blurred by a covariate-independent factor
    let blurred: Vec<f64> = portfolio
        .means
        .iter()
        .enumerate()
        .map(|(i, m)| m * (1.0 + 0.3 * ((i * 7919 % 13) as f64 / 12.0 - 0.5)))
        .collect();
    let models = vec![
        ("flat".to_string(), flat.clone()),
        ("true".to_string(), portfolio.means.clone()),
        ("blurred".to_string(), blurred),
    ];

    let curve = ordered_lorenz(&portfolio.losses, &flat, &portfolio.means)?;
    println!("Gini of the true means against a flat rate: {:.2}", gini_index(&curve));

    let matrix = gini_matrix(&models, &portfolio.losses, &GiniOptions::default())?;
    matrix.write_csv(std::io::stdout())?;
    println!("mini-max base: {}", matrix.winner_name());
    Ok(())
}
