//! Prices one risk under the five premium principles.

use ratemaking::expectile::sample_expectile;
use ratemaking::principles::{price_epp, price_evpp, price_qpp, price_sdpp, price_tsqpp};
use ratemaking::simulator::Tweedie;
use ratemaking::simulator::keyed_rng;
use rand::Rng;

fn main() -> ratemaking::Result<()> {
    let law = Tweedie::new(300.0, 1.65, 120.0)?;
    let mut rng = keyed_rng(7, 0, 0);
    let mut sample: Vec<f64> = (0..200_000).map(|_| rng.sample(law)).collect();
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let variance = sample.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expectile = sample_expectile(&sample, 0.95);
    sample.sort_by(f64::total_cmp);
    let quantile = sample[(0.95 * n) as usize];
    let p = sample.iter().filter(|y| **y == 0.0).count() as f64 / n;
    let tau_star = (0.95 - p) / (1.0 - p);
    let positive = &sample[(p * n) as usize..];
    let conditional = positive[((tau_star * positive.len() as f64) as usize).min(positive.len() - 1)];

    println!("mean {mean:.2}, sd {:.2}, P(Y = 0) {p:.4}", variance.sqrt());
    for quote in [
        price_evpp(mean, 0.10),
        price_sdpp(mean, variance, 0.05),
        price_qpp(mean, quantile, 0.05),
        price_tsqpp(mean, p, conditional, 0.95),
        price_epp(mean, expectile, 0.05),
    ] {
        println!(
            "{:<6} loading {:>8.2}  premium {:>8.2}  parameter {:.2} {:?}",
            quote.principle.as_str(),
            quote.risk_loading,
            quote.risk_premium,
            quote.loading_parameter,
            quote.flags
        );
    }
    Ok(())
}
