//! Expectile regression by asymmetric least squares.
//!
//! The fit iterates weighted least squares with weights `|τ − 1{u ≤ 0}|`
//! from the OLS start. Standard errors come from the sandwich
//! `Ŵ⁻¹ V̂ Ŵ⁻¹ / N` with `Ŵ = Σ ŵᵢ xᵢxᵢ'/N` and `V̂ = Σ ŵᵢ² ûᵢ² xᵢxᵢ'/N`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{RatemakingError, Result};
use crate::linalg::{self, SpdFactor};
use crate::stats::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpectileOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ExpectileOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

/// A converged expectile regression at one asymmetry level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedExpectile {
    pub tau: f64,
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Finite-sample covariance of the coefficients: the asymptotic sandwich divided by N.
    pub covariance: Vec<Vec<f64>>,
    pub n_observations: usize,
    #[serde(skip)]
    pub weights_final: Vec<f64>,
    #[serde(skip)]
    pub residuals_final: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedExpectile {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
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
}

fn asymmetric_weight(residual: f64, tau: f64) -> f64 {
    if residual <= 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// Asymmetric least-squares objective `Σ |τ − 1{u ≤ 0}| u²`.
pub fn asymmetric_loss(design: &DesignMatrix, responses: &[f64], tau: f64, coefficients: &[f64]) -> f64 {
    let gamma = DVector::from_column_slice(coefficients);
    let fitted = &design.matrix * gamma;
    responses
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| {
            let u = y - f;
            asymmetric_weight(u, tau) * u * u
        })
        .sum()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(RatemakingError::Domain(format!("tau {tau} outside (0, 1)")))
    }
}

/// Fits the `tau`-expectile regression of `responses` on `design`.
pub fn fit_expectile(
    design: &DesignMatrix,
    responses: &[f64],
    tau: f64,
    options: &ExpectileOptions,
) -> Result<FittedExpectile> {
    check_tau(tau)?;
    let n = design.nrows();
    let k = design.ncols();
    if responses.len() != n {
        return Err(RatemakingError::Layout("response length differs from design rows".into()));
    }
    if n < k {
        return Err(RatemakingError::Rank {
            columns: design.column_names[n..].to_vec(),
        });
    }
    let x = &design.matrix;
    let names = &design.column_names;
    let mut gamma = linalg::ordinary_least_squares(x, responses, names)?;

    let weights_for = |gamma: &DVector<f64>| -> (Vec<f64>, Vec<f64>) {
        let fitted = x * gamma;
        let residuals: Vec<f64> = responses.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
        let weights = residuals.iter().map(|u| asymmetric_weight(*u, tau)).collect();
        (weights, residuals)
    };

    let (mut weights, _) = weights_for(&gamma);
    let mut previous_weights: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let next = linalg::weighted_least_squares(x, &weights, responses, names)?;
        let delta = linalg::max_abs_diff(&next, &gamma);
        gamma = next;
        let (next_weights, _) = weights_for(&gamma);
        let stable = next_weights == weights;
        previous_weights = std::mem::replace(&mut weights, next_weights);
        if delta < options.tolerance || stable {
            converged = true;
            if !stable {
                // one more solve on the final weight pattern
                gamma = linalg::weighted_least_squares(x, &weights, responses, names)?;
                weights = weights_for(&gamma).0;
            }
            break;
        }
    }
    if !converged {
        let flipped: Vec<usize> = weights
            .iter()
            .zip(&previous_weights)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        return Err(RatemakingError::NonConvergence {
            iterations,
            detail: format!(
                "expectile weights oscillate at tau {tau}; last two patterns differ at rows {:?}",
                &flipped[..flipped.len().min(20)]
            ),
        });
    }
    let (weights_final, residuals_final) = weights_for(&gamma);
    let mut fit = FittedExpectile {
        tau,
        column_names: names.clone(),
        coefficients: gamma.iter().copied().collect(),
        covariance: Vec::new(),
        n_observations: n,
        weights_final,
        residuals_final,
        iterations,
        converged,
    };
    let sandwich = sandwich_covariance(&fit, design)?;
    fit.covariance = linalg::to_row_major(&sandwich.finite_sample());
    Ok(fit)
}

/// Sandwich estimate `D = Ŵ⁻¹ V̂ Ŵ⁻¹` of the asymptotic covariance of `√N(γ̂ − γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichCovariance {
    pub asymptotic: DMatrix<f64>,
    pub n_observations: usize,
}

impl SandwichCovariance {
    /// `D / N`, the covariance of γ̂ itself.
    pub fn finite_sample(&self) -> DMatrix<f64> {
        &self.asymptotic / self.n_observations as f64
    }

    /// `sqrt(D_jj / N)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.n_observations as f64;
        (0..self.asymptotic.nrows())
            .map(|j| (self.asymptotic[(j, j)] / n).max(0.0).sqrt())
            .collect()
    }
}

/// Builds the sandwich from the residuals at `fit`, with weights `|τ − 1{û < 0}|`.
pub fn sandwich_covariance(fit: &FittedExpectile, design: &DesignMatrix) -> Result<SandwichCovariance> {
    let n = design.nrows();
    if fit.coefficients.len() != design.ncols() {
        return Err(RatemakingError::Layout("fit and design disagree on column count".into()));
    }
    let gamma = DVector::from_column_slice(&fit.coefficients);
    let fitted = &design.matrix * gamma;
    let residuals: Vec<f64> = if fit.residuals_final.len() == n {
        fit.residuals_final.clone()
    } else {
        return Err(RatemakingError::Layout(
            "fit carries no residuals for this design".into(),
        ));
    };
    debug_assert!(residuals
        .iter()
        .zip(fitted.iter())
        .all(|(u, f)| u.is_finite() && f.is_finite()));
    let w: Vec<f64> = residuals
        .iter()
        .map(|u| if *u < 0.0 { 1.0 - fit.tau } else { fit.tau })
        .collect();
    let v_weights: Vec<f64> = w.iter().zip(&residuals).map(|(w, u)| w * w * u * u).collect();
    let nf = n as f64;
    let w_hat = linalg::weighted_gram(&design.matrix, &w) / nf;
    let v_hat = linalg::weighted_gram(&design.matrix, &v_weights) / nf;
    let w_inv = SpdFactor::new(&w_hat, &design.column_names)?.inverse();
    let mut d = &w_inv * v_hat * &w_inv;
    linalg::symmetrize(&mut d);
    Ok(SandwichCovariance {
        asymptotic: d,
        n_observations: n,
    })
}

/// Per-coefficient interval `γⱼ ± z_{q/2}·SEⱼ`, i.e. a `100(1 − q)%` interval.
pub fn confidence_interval(fit: &FittedExpectile, q: f64) -> Vec<(f64, f64)> {
    let z = if q >= 1.0 { 0.0 } else { normal_quantile(1.0 - q / 2.0) };
    fit.coefficients
        .iter()
        .zip(fit.standard_errors())
        .map(|(g, se)| (g - z * se, g + z * se))
        .collect()
}

/// Independent fits over a strictly increasing grid, ordered by τ.
pub fn expectile_curve(
    design: &DesignMatrix,
    responses: &[f64],
    tau_grid: &[f64],
    options: &ExpectileOptions,
) -> Result<Vec<FittedExpectile>> {
    if tau_grid.is_empty() || tau_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(RatemakingError::Domain("tau grid must be non-empty and strictly increasing".into()));
    }
    for &t in tau_grid {
        check_tau(t)?;
    }
    tau_grid
        .par_iter()
        .map(|&tau| {
            fit_expectile(design, responses, tau, options).map_err(|e| match e {
                RatemakingError::NonConvergence { iterations, detail } => RatemakingError::NonConvergence {
                    iterations,
                    detail: format!("tau {tau}: {detail}"),
                },
                other => other,
            })
        })
        .collect()
}

/// Counts (row, adjacent τ pair) cells where the fitted expectile decreases by more than 1e-8.
pub fn crossing_violations(curve: &[FittedExpectile], design: &DesignMatrix) -> usize {
    let fitted: Vec<DVector<f64>> = curve
        .iter()
        .map(|f| &design.matrix * DVector::from_column_slice(&f.coefficients))
        .collect();
    fitted
        .windows(2)
        .map(|w| w[0].iter().zip(w[1].iter()).filter(|(lo, hi)| **lo > **hi + 1e-8).count())
        .sum()
}

/// Writes `tau,coefficient_name,estimate,se,ci_lo,ci_hi` rows; `q` is the interval's significance level.
pub fn write_curve_csv<W: Write>(curve: &[FittedExpectile], q: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "coefficient_name", "estimate", "se", "ci_lo", "ci_hi"])?;
    for fit in curve {
        let se = fit.standard_errors();
        let ci = confidence_interval(fit, q);
        for j in 0..fit.coefficients.len() {
            w.write_record([
                fit.tau.to_string(),
                fit.column_names[j].clone(),
                fit.coefficients[j].to_string(),
                se[j].to_string(),
                ci[j].0.to_string(),
                ci[j].1.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sample `tau`-expectile: the root of `τ Σ(vᵢ − m)₊ − (1 − τ) Σ(m − vᵢ)₊`.
///
/// Bisection on `[min, max]` to `1e-10·(1 + range)`, then the linear piece
/// containing the root is solved in closed form.
pub fn sample_expectile(values: &[f64], tau: f64) -> f64 {
    assert!(!values.is_empty(), "sample_expectile needs at least one value");
    assert!(tau > 0.0 && tau < 1.0, "tau {tau} outside (0, 1)");
    let lo0 = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi0 = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo0 == hi0 {
        return lo0;
    }
    let g = |m: f64| -> f64 {
        let (mut up, mut down) = (0.0, 0.0);
        for &v in values {
            if v > m {
                up += v - m;
            } else {
                down += m - v;
            }
        }
        tau * up - (1.0 - tau) * down
    };
    let tol = 1e-10 * (1.0 + (hi0 - lo0));
    let (mut lo, mut hi) = (lo0, hi0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = 0.5 * (lo + hi);
    let (mut n_up, mut s_up, mut n_dn, mut s_dn) = (0.0, 0.0, 0.0, 0.0);
    for &v in values {
        if v > m {
            n_up += 1.0;
            s_up += v;
        } else {
            n_dn += 1.0;
            s_dn += v;
        }
    }
    let exact = (tau * s_up + (1.0 - tau) * s_dn) / (tau * n_up + (1.0 - tau) * n_dn);
    if (exact - m).abs() <= 2.0 * tol {
        exact
    } else {
        m
    }
}
