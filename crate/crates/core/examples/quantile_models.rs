//! Quantile regression of the log positive loss: one fit per class level
//! `τ*`, the parametric fit across levels, and the exactness certificate.

use ratemaking::glm::TwoPartGlm;
use ratemaking::quantile::{
    class_quantile_levels, fit_pqr, fit_quantile, optimality_certificate, predict_var, PqrOptions, QuantileOptions,
};
use ratemaking::simulator::{generate_portfolio, SimulationConfig};

fn main() -> ratemaking::Result<()> {
    let config = SimulationConfig::default();
    let portfolio = generate_portfolio(&config, 0)?;
    let n = portfolio.losses.len();
    let claims: Vec<bool> = portfolio.losses.iter().map(|y| *y > 0.0).collect();
    let glm = TwoPartGlm::fit(&portfolio.design, &claims, &vec![1.0; n], &portfolio.losses, &config.glm)?;

    let positive: Vec<usize> = (0..n).filter(|&i| claims[i]).collect();
    let severity = portfolio.design.select_rows(&positive);
    let log_losses: Vec<f64> = positive.iter().map(|&i| portfolio.losses[i].ln()).collect();

    let rows: Vec<Vec<f64>> = (0..config.class_count()).map(|s| config.class_row(s)).collect();
    let p_hat: Vec<f64> = rows.iter().map(|r| glm.no_claim_prob(r, 1.0)).collect::<Result<_, _>>()?;
    let levels = class_quantile_levels(0.95, &p_hat);
    let pqr = fit_pqr(&severity, &log_losses, &PqrOptions::default())?;
    println!("PQR: {} iterations, monotonicity violations {}", pqr.iterations, pqr.monotonicity_violations(&severity));

    println!("class  p_hat  tau*     QR VaR    PQR VaR   min slope");
    for (s, row) in rows.iter().enumerate() {
        let Some(t) = levels.tau_star[s] else {
            println!("{}    {:.3}  infeasible", config.class_label(s), p_hat[s]);
            continue;
        };
        let qr = fit_quantile(&severity, &log_losses, t, &QuantileOptions::default())?;
        println!(
            "{}    {:.3}  {:.4}  {:>8.2}  {:>8.2}   {:.1e}",
            config.class_label(s),
            p_hat[s],
            t,
            predict_var(&qr, row, t)?,
            predict_var(&pqr, row, t)?,
            optimality_certificate(&severity, &log_losses, t, &qr.coefficients),
        );
    }
    Ok(())
}
