//! Calibrates loadings so a simulated portfolio reproduces a target total:
//! closed form for EVPP and EPP, bisection over `τ` for TSQPP.

use ratemaking::allocation::{solve_loading_linear, solve_tau_tsqpp, BisectionOptions};
use ratemaking::expectile::{fit_expectile, ExpectileOptions};
use ratemaking::glm::TwoPartGlm;
use ratemaking::quantile::{fit_quantile, predict_var, QuantileOptions};
use ratemaking::simulator::{generate_portfolio, SimulationConfig};

fn main() -> ratemaking::Result<()> {
    let config = SimulationConfig::default();
    let portfolio = generate_portfolio(&config, 3)?;
    let n = portfolio.losses.len();
    let claims: Vec<bool> = portfolio.losses.iter().map(|y| *y > 0.0).collect();
    let glm = TwoPartGlm::fit(&portfolio.design, &claims, &vec![1.0; n], &portfolio.losses, &config.glm)?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| portfolio.design.row(i)).collect();
    let pure: Vec<f64> = rows.iter().map(|r| glm.pure_premium(r, 1.0)).collect::<Result<_, _>>()?;
    let p: Vec<f64> = rows.iter().map(|r| glm.no_claim_prob(r, 1.0)).collect::<Result<_, _>>()?;
    let target = portfolio.target_total(0.10);

    let evpp = solve_loading_linear("EVPP", &pure, &pure, target)?;
    let er = fit_expectile(&portfolio.design, &portfolio.losses, 0.95, &ExpectileOptions::default())?;
    let base: Vec<f64> = rows.iter().zip(&pure).map(|(r, e)| er.predict(r).map(|v| v - e)).collect::<Result<_, _>>()?;
    let epp = solve_loading_linear("EPP", &pure, &base, target)?;

    let positive: Vec<usize> = (0..n).filter(|&i| claims[i]).collect();
    let severity = portfolio.design.select_rows(&positive);
    let log_losses: Vec<f64> = positive.iter().map(|&i| portfolio.losses[i].ln()).collect();
    let options = QuantileOptions { restarts: 0, ..QuantileOptions::default() };
    let tsqpp = solve_tau_tsqpp(
        &p,
        |t| {
            let fit = fit_quantile(&severity, &log_losses, t, &options)?;
            rows.iter().map(|r| predict_var(&fit, r, t)).collect()
        },
        target,
        &BisectionOptions::default(),
    )?;

    println!("target total {target:.2}");
    for r in [&evpp, &epp, &tsqpp.result] {
        println!(
            "{:<6} parameter {:.6}  achieved {:.2}  relative residual {:.1e}  converged {}",
            r.principle,
            r.parameter,
            r.achieved,
            r.relative_residual(),
            r.converged
        );
    }
    println!("TSQPP refits {}, monotonicity violations {}", tsqpp.refits, tsqpp.monotonicity_violations);
    Ok(())
}
