//! Fits the two-part GLM to a simulated portfolio and compares class pure
//! premiums with the generating means.

use ratemaking::glm::TwoPartGlm;
use ratemaking::simulator::{generate_portfolio, SimulationConfig};

fn main() -> ratemaking::Result<()> {
    let config = SimulationConfig::default();
    let portfolio = generate_portfolio(&config, 0)?;
    let n = portfolio.losses.len();
    let claims: Vec<bool> = portfolio.losses.iter().map(|y| *y > 0.0).collect();
    let glm = TwoPartGlm::fit(&portfolio.design, &claims, &vec![1.0; n], &portfolio.losses, &config.glm)?;

    for (part, fit) in [("logistic", &glm.logistic), ("gamma", &glm.gamma)] {
        println!("{part} part ({} iterations)", fit.iterations);
        for ((name, b), se) in fit.column_names.iter().zip(&fit.coefficients).zip(fit.standard_errors()) {
            println!("  {name:<12} {b:>9.4} ({se:.4})");
        }
        if let Some(phi) = fit.dispersion {
            println!("  dispersion   {phi:.4}");
        }
    }

    println!("\nclass   p_hat   pure     true mean   sd");
    for s in 0..config.class_count() {
        let row = config.class_row(s);
        println!(
            "{}     {:.3}   {:>7.2}  {:>7.2}   {:>7.2}",
            config.class_label(s),
            glm.no_claim_prob(&row, 1.0)?,
            glm.pure_premium(&row, 1.0)?,
            config.class_mean(s),
            glm.variance(&row, 1.0)?.sqrt(),
        );
    }
    Ok(())
}
