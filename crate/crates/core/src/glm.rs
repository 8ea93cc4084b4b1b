//! Two-part GLM: exposure-corrected logistic regression for the claim
//! probability and a log-link Gamma regression for positive losses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{RatemakingError, Result};
use crate::linalg::{self, SpdFactor};

/// Bounds applied to fitted claim and no-claim probabilities.
pub const PROB_FLOOR: f64 = 1e-10;
pub const PROB_CEIL: f64 = 1.0 - 1e-10;

/// Coefficient magnitude beyond which a logistic fit is treated as separated.
const SEPARATION_BOUND: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlmFamily {
    LogisticExposure,
    GammaLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmOptions {
    pub tolerance: f64,
    pub logistic_max_iterations: usize,
    pub gamma_max_iterations: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            logistic_max_iterations: 50,
            gamma_max_iterations: 100,
        }
    }
}

/// A fitted GLM. Serializes to the model JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGlm {
    pub family: GlmFamily,
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Row-major covariance of the coefficients.
    pub covariance: Vec<Vec<f64>>,
    /// Pearson dispersion; `None` for the logistic part.
    pub dispersion: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedGlm {
    pub fn linear_predictor(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(RatemakingError::Layout(format!(
                "row has {} entries, model has {} coefficients",
                row.len(),
                self.coefficients.len()
            )));
        }
        Ok(row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum())
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.covariance.len())
            .map(|j| self.covariance[j][j].max(0.0).sqrt())
            .collect()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        linalg::from_row_major(&self.covariance)
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

fn logistic_loglik(x: &DMatrix<f64>, alpha: &DVector<f64>, claims: &[bool], exposure: &[f64]) -> f64 {
    let eta = x * alpha;
    claims
        .iter()
        .zip(exposure)
        .zip(eta.iter())
        .map(|((&r, &w), &e)| {
            let pi = clamp_prob(w * logistic(e));
            if r {
                pi.ln()
            } else {
                (1.0 - pi).ln()
            }
        })
        .sum()
}

/// Fits `logit((1 − p)/w) = x'α` by maximum likelihood.
///
/// Steps use Fisher scoring (identical to Newton when every exposure is 1) with
/// step halving; the reported covariance is the inverse observed information,
/// falling back to the expected information when the observed matrix is not
/// positive definite.
pub fn fit_logistic_exposure(
    design: &DesignMatrix,
    claims: &[bool],
    exposure: &[f64],
    options: &GlmOptions,
) -> Result<FittedGlm> {
    let n = design.nrows();
    if claims.len() != n || exposure.len() != n {
        return Err(RatemakingError::Layout("response length differs from design rows".into()));
    }
    if let Some(w) = exposure.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
        return Err(RatemakingError::Domain(format!("exposure {w} outside (0, 1]")));
    }
    let n_claims = claims.iter().filter(|c| **c).count();
    if n_claims == 0 || n_claims == n {
        return Err(RatemakingError::Domain(
            "claim indicator needs at least one claim and one non-claim".into(),
        ));
    }
    let x = &design.matrix;
    let names = &design.column_names;
    let k = design.ncols();

    let mean_w = exposure.iter().sum::<f64>() / n as f64;
    let q = (n_claims as f64 / n as f64 / mean_w).clamp(1e-6, 1.0 - 1e-6);
    let mut alpha = DVector::<f64>::zeros(k);
    alpha[0] = (q / (1.0 - q)).ln();
    let mut loglik = logistic_loglik(x, &alpha, claims, exposure);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.logistic_max_iterations {
        iterations += 1;
        let eta = x * &alpha;
        let mut score = vec![0.0; n];
        let mut info = vec![0.0; n];
        for i in 0..n {
            let s = logistic(eta[i]);
            let w = exposure[i];
            let pi = clamp_prob(w * s);
            let dpi = w * s * (1.0 - s);
            score[i] = if claims[i] { dpi / pi } else { -dpi / (1.0 - pi) };
            info[i] = dpi * dpi / (pi * (1.0 - pi));
        }
        let gram = linalg::weighted_gram(x, &info);
        let factor = SpdFactor::new(&gram, names)?;
        let grad = x.tr_mul(&DVector::from_vec(score));
        let step = factor.solve(&grad);

        let mut scale = 1.0;
        let mut candidate = &alpha + &step;
        let mut cand_ll = logistic_loglik(x, &candidate, claims, exposure);
        let mut halvings = 0;
        while !(cand_ll >= loglik - 1e-12 * loglik.abs()) && halvings < 30 {
            scale *= 0.5;
            candidate = &alpha + &step * scale;
            cand_ll = logistic_loglik(x, &candidate, claims, exposure);
            halvings += 1;
        }
        let delta = linalg::max_abs_diff(&candidate, &alpha);
        alpha = candidate;
        loglik = cand_ll;
        let max_coef = alpha.amax();
        trace.push(max_coef);
        if !max_coef.is_finite() || max_coef > SEPARATION_BOUND {
            return Err(RatemakingError::NonConvergence {
                iterations,
                detail: format!("coefficients diverging (perfect separation?); max |alpha| trace {trace:?}"),
            });
        }
        if delta < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RatemakingError::NonConvergence {
            iterations,
            detail: format!("logistic fit; max |alpha| trace {trace:?}"),
        });
    }

    let eta = x * &alpha;
    let mut observed = vec![0.0; n];
    let mut expected = vec![0.0; n];
    for i in 0..n {
        let s = logistic(eta[i]);
        let w = exposure[i];
        let pi = clamp_prob(w * s);
        let dpi = w * s * (1.0 - s);
        expected[i] = dpi * dpi / (pi * (1.0 - pi));
        observed[i] = if claims[i] {
            s * (1.0 - s)
        } else {
            dpi * (1.0 - 2.0 * s + w * s * s) / ((1.0 - pi) * (1.0 - pi))
        };
    }
    let covariance = match SpdFactor::new(&linalg::weighted_gram(x, &observed), names) {
        Ok(f) => f.inverse(),
        Err(_) => SpdFactor::new(&linalg::weighted_gram(x, &expected), names)?.inverse(),
    };

    Ok(FittedGlm {
        family: GlmFamily::LogisticExposure,
        column_names: names.clone(),
        coefficients: alpha.iter().copied().collect(),
        covariance: linalg::to_row_major(&covariance),
        dispersion: None,
        iterations,
        converged,
    })
}

fn gamma_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(y, m)| -(y / m).ln() + (y - m) / m)
        .sum::<f64>()
}

/// Fits `log μ = x'β` for strictly positive responses by IRLS.
///
/// With the log link and Gamma variance the working weights are all one, so
/// each step regresses the working response `η + (y − μ)/μ` on the design.
pub fn fit_gamma_log(design: &DesignMatrix, responses: &[f64], options: &GlmOptions) -> Result<FittedGlm> {
    let n = design.nrows();
    let k = design.ncols();
    if responses.len() != n {
        return Err(RatemakingError::Layout("response length differs from design rows".into()));
    }
    if let Some(y) = responses.iter().find(|y| !(**y > 0.0) || !y.is_finite()) {
        return Err(RatemakingError::Domain(format!("Gamma response {y} is not strictly positive")));
    }
    if n <= k {
        return Err(RatemakingError::Domain(format!(
            "{n} observations cannot identify {k} coefficients and a dispersion"
        )));
    }
    let x = &design.matrix;
    let names = &design.column_names;
    let ones = vec![1.0; n];
    let gram = linalg::weighted_gram(x, &ones);
    let factor = SpdFactor::new(&gram, names)?;

    let mean_y = responses.iter().sum::<f64>() / n as f64;
    let mut beta = DVector::<f64>::zeros(k);
    beta[0] = mean_y.ln();
    let mut mu: Vec<f64> = (x * &beta).iter().map(|e| e.exp()).collect();
    let mut deviance = gamma_deviance(responses, &mu);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.gamma_max_iterations {
        iterations += 1;
        let eta = x * &beta;
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (responses[i] - mu[i]) / mu[i]).collect();
        let target = factor.solve(&x.tr_mul(&DVector::from_vec(z)));
        let step = &target - &beta;
        let mut scale = 1.0;
        let mut candidate = target;
        let mut cand_mu: Vec<f64> = (x * &candidate).iter().map(|e| e.exp()).collect();
        let mut cand_dev = gamma_deviance(responses, &cand_mu);
        let mut halvings = 0;
        while !(cand_dev <= deviance + 1e-12 * deviance.abs()) && halvings < 30 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_mu = (x * &candidate).iter().map(|e| e.exp()).collect();
            cand_dev = gamma_deviance(responses, &cand_mu);
            halvings += 1;
        }
        let delta = linalg::max_abs_diff(&candidate, &beta);
        beta = candidate;
        mu = cand_mu;
        deviance = cand_dev;
        if delta < options.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RatemakingError::NonConvergence {
            iterations,
            detail: format!("Gamma fit; deviance {deviance}"),
        });
    }
    let pearson: f64 = responses
        .iter()
        .zip(&mu)
        .map(|(y, m)| ((y - m) / m).powi(2))
        .sum();
    let dispersion = pearson / (n - k) as f64;
    let covariance = factor.inverse() * dispersion;
    Ok(FittedGlm {
        family: GlmFamily::GammaLog,
        column_names: names.clone(),
        coefficients: beta.iter().copied().collect(),
        covariance: linalg::to_row_major(&covariance),
        dispersion: Some(dispersion),
        iterations,
        converged,
    })
}

/// Probability of no claim, `p = 1 − w·σ(x'α)`, clamped away from 0 and 1.
pub fn predict_no_claim_prob(logit: &FittedGlm, row: &[f64], exposure: f64) -> Result<f64> {
    let eta = logit.linear_predictor(row)?;
    Ok(clamp_prob(1.0 - exposure * logistic(eta)))
}

fn check_pair(logit: &FittedGlm, gamma: &FittedGlm) -> Result<()> {
    if logit.family != GlmFamily::LogisticExposure || gamma.family != GlmFamily::GammaLog {
        return Err(RatemakingError::Layout("expected a logistic and a Gamma fit".into()));
    }
    if logit.column_names != gamma.column_names {
        return Err(RatemakingError::Layout(
            "logistic and Gamma fits use different design columns".into(),
        ));
    }
    Ok(())
}

/// `E[Y] = (1 − p)·exp(x'β)`.
pub fn pure_premium(logit: &FittedGlm, gamma: &FittedGlm, row: &[f64], exposure: f64) -> Result<f64> {
    check_pair(logit, gamma)?;
    let p = predict_no_claim_prob(logit, row, exposure)?;
    Ok((1.0 - p) * gamma.linear_predictor(row)?.exp())
}

/// Variance of `R·Y*` with `R ~ Bernoulli(1 − p)` independent of Gamma `Y*`:
/// `(1 − p)·φ·μ² + p·(1 − p)·μ²`.
pub fn two_part_variance(logit: &FittedGlm, gamma: &FittedGlm, row: &[f64], exposure: f64) -> Result<f64> {
    check_pair(logit, gamma)?;
    let p = predict_no_claim_prob(logit, row, exposure)?;
    let mu = gamma.linear_predictor(row)?.exp();
    let phi = gamma.dispersion.unwrap_or(0.0);
    Ok((1.0 - p) * phi * mu * mu + p * (1.0 - p) * mu * mu)
}

/// Logistic and Gamma parts fitted on the same design layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPartGlm {
    pub logistic: FittedGlm,
    pub gamma: FittedGlm,
}

impl TwoPartGlm {
    /// Fits both parts; the Gamma part uses the rows with a positive loss.
    pub fn fit(
        design: &DesignMatrix,
        claims: &[bool],
        exposure: &[f64],
        losses: &[f64],
        options: &GlmOptions,
    ) -> Result<Self> {
        let logistic = fit_logistic_exposure(design, claims, exposure, options)?;
        let positive: Vec<usize> = (0..losses.len()).filter(|&i| losses[i] > 0.0).collect();
        let severity = design.select_rows(&positive);
        let y: Vec<f64> = positive.iter().map(|&i| losses[i]).collect();
        let gamma = fit_gamma_log(&severity, &y, options)?;
        Ok(Self { logistic, gamma })
    }

    pub fn no_claim_prob(&self, row: &[f64], exposure: f64) -> Result<f64> {
        predict_no_claim_prob(&self.logistic, row, exposure)
    }

    pub fn pure_premium(&self, row: &[f64], exposure: f64) -> Result<f64> {
        pure_premium(&self.logistic, &self.gamma, row, exposure)
    }

    pub fn variance(&self, row: &[f64], exposure: f64) -> Result<f64> {
        two_part_variance(&self.logistic, &self.gamma, row, exposure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn intercept_design(n: usize) -> DesignMatrix {
        DesignMatrix {
            matrix: DMatrix::from_element(n, 1, 1.0),
            column_names: vec!["(Intercept)".into()],
        }
    }

    fn two_col_design(xs: &[f64]) -> DesignMatrix {
        DesignMatrix {
            matrix: DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] }),
            column_names: vec!["(Intercept)".into(), "x".into()],
        }
    }

    #[test]
    fn intercept_only_logistic_is_logit_of_share() {
        let claims: Vec<bool> = (0..40).map(|i| i % 5 == 0).collect();
        let fit = fit_logistic_exposure(&intercept_design(40), &claims, &[1.0; 40], &GlmOptions::default()).unwrap();
        let q: f64 = 0.2;
        assert!((fit.coefficients[0] - (q / (1.0 - q)).ln()).abs() < 1e-10);
        assert!(fit.converged);
        // covariance of the intercept is 1/(n q (1 - q))
        assert!((fit.covariance[0][0] - 1.0 / (40.0 * 0.2 * 0.8)).abs() < 1e-10);
    }

    /// Plain Newton–Raphson on the ordinary logistic likelihood.
    fn direct_newton(xs: &[f64], y: &[bool]) -> (f64, f64) {
        let (mut a, mut b) = (0.0_f64, 0.0_f64);
        for _ in 0..100 {
            let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (x, &r) in xs.iter().zip(y) {
                let p = 1.0 / (1.0 + (-(a + b * x)).exp());
                let resid = if r { 1.0 } else { 0.0 } - p;
                g0 += resid;
                g1 += resid * x;
                let w = p * (1.0 - p);
                h00 += w;
                h01 += w * x;
                h11 += w * x * x;
            }
            let det = h00 * h11 - h01 * h01;
            a += (h11 * g0 - h01 * g1) / det;
            b += (-h01 * g0 + h00 * g1) / det;
        }
        (a, b)
    }

    #[test]
    fn unit_exposure_matches_standard_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..300).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<bool> = xs
            .iter()
            .map(|x| rng.random::<f64>() < 1.0 / (1.0 + (-(-0.5 + 0.8 * x)).exp()))
            .collect();
        let fit = fit_logistic_exposure(&two_col_design(&xs), &y, &vec![1.0; 300], &GlmOptions::default()).unwrap();
        let (a, b) = direct_newton(&xs, &y);
        assert!((fit.coefficients[0] - a).abs() < 1e-9);
        assert!((fit.coefficients[1] - b).abs() < 1e-9);
    }

    #[test]
    fn perfect_separation_fails() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<bool> = xs.iter().map(|x| *x >= 10.0).collect();
        let err = fit_logistic_exposure(&two_col_design(&xs), &y, &[1.0; 20], &GlmOptions::default()).unwrap_err();
        assert!(matches!(err, RatemakingError::NonConvergence { .. }), "{err}");
    }

    #[test]
    fn collinear_design_is_rank_error() {
        let design = DesignMatrix {
            matrix: DMatrix::from_fn(10, 2, |_, _| 1.0),
            column_names: vec!["(Intercept)".into(), "dup".into()],
        };
        let claims: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let err = fit_logistic_exposure(&design, &claims, &[1.0; 10], &GlmOptions::default()).unwrap_err();
        match err {
            RatemakingError::Rank { columns } => assert_eq!(columns, vec!["dup".to_string()]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn gamma_intercept_is_log_mean() {
        let y = [10.0, 20.0, 35.0, 5.0, 80.0];
        let fit = fit_gamma_log(&intercept_design(5), &y, &GlmOptions::default()).unwrap();
        assert!((fit.coefficients[0] - 30.0_f64.ln()).abs() < 1e-12);
        assert!(fit.dispersion.unwrap() > 0.0);
    }

    #[test]
    fn gamma_rejects_non_positive() {
        let err = fit_gamma_log(&intercept_design(3), &[1.0, 0.0, 2.0], &GlmOptions::default()).unwrap_err();
        assert!(matches!(err, RatemakingError::Domain(_)));
    }

    #[test]
    fn gamma_recovers_coefficients_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
        let shape = 2.0;
        let y: Vec<f64> = xs
            .iter()
            .map(|x| {
                let mu = (3.0 + 0.5 * x).exp();
                Gamma::new(shape, mu / shape).unwrap().sample(&mut rng)
            })
            .collect();
        let design = two_col_design(&xs);
        let fit = fit_gamma_log(&design, &y, &GlmOptions::default()).unwrap();
        let se = fit.standard_errors();
        assert!((fit.coefficients[0] - 3.0).abs() < 3.0 * se[0]);
        assert!((fit.coefficients[1] - 0.5).abs() < 3.0 * se[1]);
        // X'W(y − μ)/μ with unit working weights
        for j in 0..2 {
            let s: f64 = (0..200)
                .map(|i| {
                    let row = design.row(i);
                    let mu = fit.linear_predictor(&row).unwrap().exp();
                    row[j] * (y[i] - mu) / mu
                })
                .sum();
            assert!(s.abs() < 1e-6, "component {j}: {s}");
        }
    }

    #[test]
    fn fits_are_bit_deterministic() {
        let xs: Vec<f64> = (0..50).map(|i| (i % 3) as f64).collect();
        let y: Vec<bool> = (0..50).map(|i| i % 4 == 0 || i % 7 == 0).collect();
        let d = two_col_design(&xs);
        let a = fit_logistic_exposure(&d, &y, &[0.7; 50], &GlmOptions::default()).unwrap();
        let b = fit_logistic_exposure(&d, &y, &[0.7; 50], &GlmOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    fn manual_fit(coef: f64, family: GlmFamily, dispersion: Option<f64>) -> FittedGlm {
        FittedGlm {
            family,
            column_names: vec!["(Intercept)".into()],
            coefficients: vec![coef],
            covariance: vec![vec![0.0]],
            dispersion,
            iterations: 0,
            converged: true,
        }
    }

    #[test]
    fn prediction_edge_cases() {
        let logit = manual_fit(-1e6, GlmFamily::LogisticExposure, None);
        let gamma = manual_fit(5.0, GlmFamily::GammaLog, Some(0.5));
        let p = predict_no_claim_prob(&logit, &[1.0], 1.0).unwrap();
        assert!((p - PROB_CEIL).abs() < 1e-15);
        assert!(pure_premium(&logit, &gamma, &[1.0], 1.0).unwrap() < 1e-6);
        assert!(two_part_variance(&logit, &gamma, &[1.0], 1.0).unwrap() < 1e-3);

        // halving exposure halves the claim probability
        let logit = manual_fit(-1.5, GlmFamily::LogisticExposure, None);
        let full = 1.0 - predict_no_claim_prob(&logit, &[1.0], 1.0).unwrap();
        let half = 1.0 - predict_no_claim_prob(&logit, &[1.0], 0.5).unwrap();
        assert!((half - full / 2.0).abs() < 1e-15);

        // p → 0 gives the pure Gamma variance ψ μ²
        let logit = manual_fit(1e6, GlmFamily::LogisticExposure, None);
        let mu = 5.0_f64.exp();
        let v = two_part_variance(&logit, &gamma, &[1.0], 1.0).unwrap();
        assert!((v - 0.5 * mu * mu).abs() / (0.5 * mu * mu) < 1e-8);

        assert!(pure_premium(&gamma, &logit, &[1.0], 1.0).is_err());
        assert!(pure_premium(&logit, &gamma, &[1.0, 0.0], 1.0).is_err());
    }
}
