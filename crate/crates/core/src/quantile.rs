//! Pinball-loss quantile regression on log losses.
//!
//! `fit_quantile` solves a single level by smoothed IRLS (weights
//! `τ/max(ε,|u|)` above the fit, `(1 − τ)/max(ε,|u|)` on or below it).
//! `fit_pqr` models every coefficient as a polynomial in the level and
//! minimizes the pinball loss summed over a grid of levels.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::error::{RatemakingError, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantileOptions {
    /// Residual floor in the IRLS weights.
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Additional randomly perturbed starts; the best objective wins.
    pub restarts: usize,
    pub restart_seed: u64,
    /// After each step, solve the exact fit through the `k` smallest residuals
    /// and stop there if it passes the dual-feasibility check (an exact optimum).
    pub vertex_check: bool,
}

impl Default for QuantileOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            tolerance: 1e-8,
            max_iterations: 500,
            restarts: 5,
            restart_seed: 0x5eed,
            vertex_check: true,
        }
    }
}

/// Check loss `ρ_τ(u) = u(τ − 1{u < 0})`.
pub fn pinball(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

pub fn pinball_objective(design: &DesignMatrix, responses: &[f64], tau: f64, coefficients: &[f64]) -> f64 {
    let fitted = &design.matrix * DVector::from_column_slice(coefficients);
    responses
        .iter()
        .zip(fitted.iter())
        .map(|(y, f)| pinball(y - f, tau))
        .sum()
}

/// A single-level quantile regression on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedQuantile {
    pub tau: f64,
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_level(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(RatemakingError::Infeasible(format!("quantile level {tau} outside (0, 1)")))
    }
}

/// Smoothed IRLS on rows that may carry different levels (`taus[i]`).
struct IrlsOutcome {
    coefficients: DVector<f64>,
    objective: f64,
    iterations: usize,
    /// Passed the exact optimality check.
    certified: bool,
}

fn smoothed_irls(
    x: &DMatrix<f64>,
    y: &[f64],
    taus: &[f64],
    names: &[String],
    start: DVector<f64>,
    options: &QuantileOptions,
) -> Result<IrlsOutcome> {
    const STALL_WINDOW: usize = 20;
    let objective = |g: &DVector<f64>| -> f64 {
        let fitted = x * g;
        y.iter()
            .zip(fitted.iter())
            .zip(taus)
            .map(|((y, f), t)| pinball(y - f, *t))
            .sum()
    };
    let mut gamma = start;
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut reached_tolerance = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let fitted = x * &gamma;
        let weights: Vec<f64> = y
            .iter()
            .zip(fitted.iter())
            .zip(taus)
            .map(|((y, f), t)| {
                let u = y - f;
                let side = if u > 0.0 { *t } else { 1.0 - t };
                side / u.abs().max(options.epsilon)
            })
            .collect();
        let next = linalg::weighted_least_squares(x, &weights, y, names)?;
        let delta = linalg::max_abs_diff(&next, &gamma);
        if !delta.is_finite() {
            return Err(RatemakingError::NonConvergence {
                iterations,
                detail: "smoothed IRLS produced non-finite coefficients".into(),
            });
        }
        gamma = next;
        let obj = objective(&gamma);
        trace.push(obj);
        if options.vertex_check && iterations % VERTEX_CHECK_EVERY == 0 {
            if let Some(vertex) = exact_refine(x, y, taus, &gamma, 0) {
                return Ok(IrlsOutcome {
                    objective: objective(&vertex),
                    coefficients: vertex,
                    iterations,
                    certified: true,
                });
            }
        }
        if delta < options.tolerance {
            reached_tolerance = true;
            break;
        }
        let stalled = trace.len() > STALL_WINDOW
            && trace[trace.len() - 1 - STALL_WINDOW] - obj <= 1e-9 * obj.abs().max(1.0);
        if options.vertex_check && stalled {
            break;
        }
    }
    if options.vertex_check {
        if let Some(vertex) = exact_refine(x, y, taus, &gamma, MAX_PIVOTS) {
            return Ok(IrlsOutcome {
                objective: objective(&vertex),
                coefficients: vertex,
                iterations,
                certified: true,
            });
        }
    }
    if !reached_tolerance {
        let tail = &trace[trace.len().saturating_sub(10)..];
        return Err(RatemakingError::NonConvergence {
            iterations,
            detail: format!("smoothed IRLS; last objectives {tail:?}"),
        });
    }
    Ok(IrlsOutcome {
        objective: objective(&gamma),
        coefficients: gamma,
        iterations,
        certified: false,
    })
}

const MAX_PIVOTS: usize = 5000;
const VERTEX_CHECK_EVERY: usize = 5;

/// Exact fit through the `k` smallest-residual rows that are linearly independent.
fn basic_solution(x: &DMatrix<f64>, y: &[f64], gamma: &DVector<f64>) -> Option<(DVector<f64>, Vec<usize>)> {
    let k = x.ncols();
    let fitted = x * gamma;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| {
        (y[a] - fitted[a])
            .abs()
            .total_cmp(&(y[b] - fitted[b]).abs())
            .then(a.cmp(&b))
    });
    let mut chosen = Vec::with_capacity(k);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    for &i in &order {
        let row = x.row(i).transpose();
        let mut r = row.clone();
        for q in &basis {
            r -= q * q.dot(&row);
        }
        let norm = r.norm();
        if norm > 1e-9 * row.norm().max(1e-300) {
            basis.push(r / norm);
            chosen.push(i);
            if chosen.len() == k {
                break;
            }
        }
    }
    if chosen.len() < k {
        return None;
    }
    let sub = x.select_rows(&chosen);
    let rhs = DVector::from_iterator(k, chosen.iter().map(|&i| y[i]));
    sub.lu().solve(&rhs).map(|v| (v, chosen))
}

/// Exact minimizer reached from the basic solution near `gamma` by at most
/// `max_pivots` simplex steps, or `None` if none is certified.
///
/// A vertex with basis `h` is optimal iff the multipliers `d` solving
/// `X_h'd = −Σ_{i∉h} ψᵢxᵢ` lie in `[τᵢ − 1, τᵢ]`, `ψᵢ = τᵢ − 1{uᵢ < 0}`.
/// Otherwise the most violated row leaves the basis and an exact line search
/// along the resulting edge picks the entering row.
fn exact_refine(
    x: &DMatrix<f64>,
    y: &[f64],
    taus: &[f64],
    gamma: &DVector<f64>,
    max_pivots: usize,
) -> Option<DVector<f64>> {
    const DUAL_TOLERANCE: f64 = 1e-9;
    let (mut vertex, mut basis) = basic_solution(x, y, gamma)?;
    let n = y.len();
    let k = x.ncols();
    let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut in_basis = vec![false; n];
    for &i in &basis {
        in_basis[i] = true;
    }
    for pivot in 0..=max_pivots {
        let residuals: Vec<f64> = (x * &vertex).iter().zip(y).map(|(f, y)| y - f).collect();
        let mut psi = DVector::<f64>::zeros(n);
        for i in 0..n {
            if in_basis[i] {
                continue;
            }
            let u = residuals[i];
            if u.abs() <= 1e-12 * scale {
                // a tie outside the basis makes the vertex degenerate
                return None;
            }
            psi[i] = if u > 0.0 { taus[i] } else { taus[i] - 1.0 };
        }
        let g = x.tr_mul(&psi);
        let xh = x.select_rows(&basis);
        let lu = xh.clone().lu();
        let d = xh.transpose().lu().solve(&(-g))?;
        let mut worst: Option<(usize, f64, f64)> = None;
        for (pos, (&i, di)) in basis.iter().zip(d.iter()).enumerate() {
            let (violation, sign) = if *di < taus[i] - 1.0 - DUAL_TOLERANCE {
                (taus[i] - 1.0 - di, 1.0)
            } else if *di > taus[i] + DUAL_TOLERANCE {
                (di - taus[i], -1.0)
            } else {
                continue;
            };
            if worst.is_none_or(|w| violation > w.1) {
                worst = Some((pos, violation, sign));
            }
        }
        let Some((leave, _, sign)) = worst else {
            return Some(vertex);
        };
        if pivot == max_pivots {
            return None;
        }
        let mut e = DVector::<f64>::zeros(k);
        e[leave] = sign;
        let direction = lu.solve(&e)?;
        let a: Vec<f64> = (x * &direction).iter().copied().collect();
        // slope of t ↦ Σρ(uᵢ − t·aᵢ) just right of 0
        let leaving_row = basis[leave];
        let mut slope = if sign > 0.0 { 1.0 - taus[leaving_row] } else { taus[leaving_row] };
        slope *= a[leaving_row].abs();
        let mut breaks: Vec<(f64, usize)> = Vec::new();
        for i in 0..n {
            if in_basis[i] || a[i] == 0.0 {
                continue;
            }
            let u = residuals[i];
            slope -= if u > 0.0 { taus[i] * a[i] } else { (taus[i] - 1.0) * a[i] };
            let t = u / a[i];
            if t > 0.0 {
                breaks.push((t, i));
            }
        }
        if slope >= 0.0 {
            return None;
        }
        breaks.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        let mut entering = None;
        for (t, i) in breaks {
            slope += a[i].abs();
            if slope >= 0.0 {
                entering = Some((t, i));
                break;
            }
        }
        let (_, enter) = entering?;
        in_basis[basis[leave]] = false;
        in_basis[enter] = true;
        basis[leave] = enter;
        let sub = x.select_rows(&basis);
        let rhs = DVector::from_iterator(k, basis.iter().map(|&i| y[i]));
        vertex = sub.lu().solve(&rhs)?;
    }
    None
}

/// Fits the `tau`-quantile regression of `responses` (already log losses).
pub fn fit_quantile(
    design: &DesignMatrix,
    responses: &[f64],
    tau: f64,
    options: &QuantileOptions,
) -> Result<FittedQuantile> {
    check_level(tau)?;
    let n = design.nrows();
    if responses.len() != n {
        return Err(RatemakingError::Layout("response length differs from design rows".into()));
    }
    if let Some(y) = responses.iter().find(|y| !y.is_finite()) {
        return Err(RatemakingError::Domain(format!("non-finite response {y}")));
    }
    let x = &design.matrix;
    let names = &design.column_names;
    let taus = vec![tau; n];
    let ols = linalg::ordinary_least_squares(x, responses, names)?;
    let mut best = smoothed_irls(x, responses, &taus, names, ols.clone(), options)?;

    if options.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(options.restart_seed);
        let scale = crate::stats::sample_variance(responses).sqrt().max(1.0);
        for _ in 0..options.restarts {
            let start = DVector::from_iterator(
                ols.len(),
                ols.iter().map(|b| b + scale * rng.random_range(-1.0..1.0)),
            );
            if let Ok(candidate) = smoothed_irls(x, responses, &taus, names, start, options) {
                if candidate.objective < best.objective {
                    best = candidate;
                }
            }
        }
    }

    Ok(FittedQuantile {
        tau,
        column_names: names.clone(),
        coefficients: best.coefficients.iter().copied().collect(),
        objective_value: best.objective,
        iterations: best.iterations,
        converged: true,
    })
}

/// Smallest directional derivative of the pinball objective along `±eⱼ`.
/// Non-negative (up to tolerance) at an optimum.
pub fn optimality_certificate(design: &DesignMatrix, responses: &[f64], tau: f64, coefficients: &[f64]) -> f64 {
    let fitted = &design.matrix * DVector::from_column_slice(coefficients);
    let mut worst = f64::INFINITY;
    for j in 0..design.ncols() {
        for sign in [1.0, -1.0] {
            let mut d = 0.0;
            for (i, y) in responses.iter().enumerate() {
                let u = y - fitted[i];
                let xd = sign * design.matrix[(i, j)];
                if u.abs() <= 1e-9 {
                    d += pinball(-xd, tau);
                } else {
                    let psi = if u > 0.0 { tau } else { tau - 1.0 };
                    d -= psi * xd;
                }
            }
            worst = worst.min(d);
        }
    }
    worst
}

/// Polynomial basis in the quantile level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PqrBasis {
    /// `1, τ, τ², …`
    Raw,
    /// Shifted Legendre polynomials on `[0, 1]`.
    ShiftedLegendre,
}

pub fn basis_values(tau: f64, degree: usize, basis: PqrBasis) -> Vec<f64> {
    match basis {
        PqrBasis::Raw => (0..=degree).map(|m| tau.powi(m as i32)).collect(),
        PqrBasis::ShiftedLegendre => {
            let x = 2.0 * tau - 1.0;
            let mut out = Vec::with_capacity(degree + 1);
            out.push(1.0);
            if degree >= 1 {
                out.push(x);
            }
            for n in 1..degree {
                let nf = n as f64;
                let next = ((2.0 * nf + 1.0) * x * out[n] - nf * out[n - 1]) / (nf + 1.0);
                out.push(next);
            }
            out
        }
    }
}

/// Default PQR grid: 99 equispaced levels `0.01 … 0.99`.
pub fn default_pqr_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PqrOptions {
    pub degree: usize,
    pub basis: PqrBasis,
    pub grid: Vec<f64>,
    pub irls: QuantileOptions,
}

impl Default for PqrOptions {
    fn default() -> Self {
        Self {
            degree: 2,
            basis: PqrBasis::Raw,
            grid: default_pqr_grid(),
            irls: QuantileOptions {
                restarts: 0,
                ..QuantileOptions::default()
            },
        }
    }
}

/// Parametric quantile regression: `γⱼ(τ) = Σₘ θₘⱼ bₘ(τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPqr {
    pub column_names: Vec<String>,
    /// `(degree + 1) × k`, row `m` holds the coefficients of basis function `m`.
    pub theta: Vec<Vec<f64>>,
    pub basis_degree: usize,
    pub basis: PqrBasis,
    pub tau_grid: Vec<f64>,
    /// Pinball loss summed over rows and averaged over the grid.
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedPqr {
    pub fn coefficients_at(&self, tau: f64) -> Vec<f64> {
        let b = basis_values(tau, self.basis_degree, self.basis);
        let k = self.column_names.len();
        (0..k)
            .map(|j| b.iter().zip(&self.theta).map(|(bm, row)| bm * row[j]).sum())
            .collect()
    }

    /// Grid points and observed rows where predicted quantiles decrease in τ.
    pub fn monotonicity_violations(&self, design: &DesignMatrix) -> usize {
        let preds: Vec<DVector<f64>> = self
            .tau_grid
            .iter()
            .map(|&t| &design.matrix * DVector::from_vec(self.coefficients_at(t)))
            .collect();
        preds
            .windows(2)
            .map(|w| w[0].iter().zip(w[1].iter()).filter(|(a, b)| **a > **b + 1e-10).count())
            .sum()
    }
}

fn expanded_design(x: &DMatrix<f64>, grid: &[f64], degree: usize, basis: PqrBasis) -> DMatrix<f64> {
    let n = x.nrows();
    let k = x.ncols();
    let p = degree + 1;
    let bases: Vec<Vec<f64>> = grid.iter().map(|t| basis_values(*t, degree, basis)).collect();
    DMatrix::from_fn(n * grid.len(), p * k, |r, c| {
        let (g, i) = (r / n, r % n);
        let (m, j) = (c / k, c % k);
        x[(i, j)] * bases[g][m]
    })
}

fn expanded_names(names: &[String], degree: usize) -> Vec<String> {
    (0..=degree)
        .flat_map(|m| names.iter().map(move |n| format!("{n}*b{m}")))
        .collect()
}

/// Least-squares projection of per-level coefficient paths onto the basis.
fn project_onto_basis(paths: &[Vec<f64>], grid: &[f64], degree: usize, basis: PqrBasis) -> Result<DVector<f64>> {
    let k = paths[0].len();
    let p = degree + 1;
    let b = DMatrix::from_fn(grid.len(), p, |g, m| basis_values(grid[g], degree, basis)[m]);
    let names: Vec<String> = (0..p).map(|m| format!("b{m}")).collect();
    let mut theta = DVector::zeros(p * k);
    for j in 0..k {
        let path: Vec<f64> = paths.iter().map(|c| c[j]).collect();
        let coef = linalg::ordinary_least_squares(&b, &path, &names)?;
        for m in 0..p {
            theta[m * k + j] = coef[m];
        }
    }
    Ok(theta)
}

/// Fits a PQR over `options.grid`.
pub fn fit_pqr(design: &DesignMatrix, responses: &[f64], options: &PqrOptions) -> Result<FittedPqr> {
    let grid = &options.grid;
    let degree = options.degree;
    let min_grid = if degree == 0 { 1 } else { degree + 2 };
    if grid.len() < min_grid {
        return Err(RatemakingError::Domain(format!(
            "degree {degree} needs at least {min_grid} grid levels, got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(RatemakingError::Domain("PQR grid must be strictly increasing".into()));
    }
    for &t in grid {
        check_level(t)?;
    }
    let n = design.nrows();
    if responses.len() != n {
        return Err(RatemakingError::Layout("response length differs from design rows".into()));
    }
    let single = QuantileOptions {
        restarts: 0,
        ..options.irls
    };
    let paths: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&t| fit_quantile(design, responses, t, &single).map(|f| f.coefficients))
        .collect::<Result<_>>()?;

    let k = design.ncols();
    let projected = project_onto_basis(&paths, grid, degree, options.basis)?;
    let mut best = solve_pqr(design, responses, options, degree, projected)?;
    if degree >= 1 && !best.certified {
        // the best constant-in-τ solution is a feasible point of every higher degree
        let mean_path = project_onto_basis(&paths, grid, 0, options.basis)?;
        let constant = solve_pqr(design, responses, options, 0, mean_path)?;
        let b0 = basis_values(0.5, degree, options.basis)[0];
        let mut start = DVector::zeros((degree + 1) * k);
        for j in 0..k {
            start[j] = constant.coefficients[j] / b0;
        }
        let embedded = solve_pqr(design, responses, options, degree, start)?;
        if embedded.objective < best.objective {
            best = embedded;
        }
    }
    let theta = (0..=degree)
        .map(|m| (0..k).map(|j| best.coefficients[m * k + j]).collect())
        .collect();
    Ok(FittedPqr {
        column_names: design.column_names.clone(),
        theta,
        basis_degree: degree,
        basis: options.basis,
        tau_grid: grid.clone(),
        objective_value: best.objective / grid.len() as f64,
        iterations: best.iterations,
        converged: best.certified || best.iterations < options.irls.max_iterations,
    })
}

/// IRLS in the expanded design from `start`; keeps `start` if the solver fails
/// to improve on it.
fn solve_pqr(
    design: &DesignMatrix,
    responses: &[f64],
    options: &PqrOptions,
    degree: usize,
    start: DVector<f64>,
) -> Result<IrlsOutcome> {
    let grid = &options.grid;
    let n = design.nrows();
    let big_x = expanded_design(&design.matrix, grid, degree, options.basis);
    let big_names = expanded_names(&design.column_names, degree);
    let big_y: Vec<f64> = grid.iter().flat_map(|_| responses.iter().copied()).collect();
    let big_tau: Vec<f64> = grid.iter().flat_map(|t| std::iter::repeat_n(*t, n)).collect();
    let initial = {
        let fitted = &big_x * &start;
        big_y
            .iter()
            .zip(fitted.iter())
            .zip(&big_tau)
            .map(|((y, f), t)| pinball(y - f, *t))
            .sum::<f64>()
    };
    match smoothed_irls(&big_x, &big_y, &big_tau, &big_names, start.clone(), &options.irls) {
        Ok(o) if o.objective <= initial => Ok(o),
        Ok(o) => Ok(IrlsOutcome {
            coefficients: start,
            objective: initial,
            iterations: o.iterations,
            certified: false,
        }),
        Err(RatemakingError::NonConvergence { iterations, .. }) => Ok(IrlsOutcome {
            coefficients: start,
            objective: initial,
            iterations,
            certified: false,
        }),
        Err(e) => Err(e),
    }
}

/// Conditional quantile levels `τ* = (τ − p̂)/(1 − p̂)` per tariff class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassQuantileLevels {
    pub tau: f64,
    pub no_claim_probs: Vec<f64>,
    /// `None` where `p̂ ≥ τ`: the unconditional quantile is then zero.
    pub tau_star: Vec<Option<f64>>,
}

impl ClassQuantileLevels {
    pub fn is_feasible(&self, class: usize) -> bool {
        self.tau_star[class].is_some()
    }

    pub fn infeasible_count(&self) -> usize {
        self.tau_star.iter().filter(|t| t.is_none()).count()
    }
}

pub fn tau_star(tau: f64, no_claim_prob: f64) -> Option<f64> {
    if no_claim_prob < tau {
        Some((tau - no_claim_prob) / (1.0 - no_claim_prob))
    } else {
        None
    }
}

pub fn class_quantile_levels(tau: f64, no_claim_probs: &[f64]) -> ClassQuantileLevels {
    ClassQuantileLevels {
        tau,
        no_claim_probs: no_claim_probs.to_vec(),
        tau_star: no_claim_probs.iter().map(|p| tau_star(tau, *p)).collect(),
    }
}

/// Anything that yields a log-scale conditional quantile for a design row.
pub trait LogQuantileModel {
    fn log_quantile(&self, row: &[f64], tau: f64) -> Result<f64>;
}

fn dot(row: &[f64], coefficients: &[f64]) -> Result<f64> {
    if row.len() != coefficients.len() {
        return Err(RatemakingError::Layout(format!(
            "row has {} entries, model has {} coefficients",
            row.len(),
            coefficients.len()
        )));
    }
    Ok(row.iter().zip(coefficients).map(|(x, b)| x * b).sum())
}

impl LogQuantileModel for FittedQuantile {
    /// A single-level fit answers only at its own level.
    fn log_quantile(&self, row: &[f64], tau: f64) -> Result<f64> {
        if (tau - self.tau).abs() > 1e-12 {
            return Err(RatemakingError::Infeasible(format!(
                "model fitted at tau {} queried at {tau}",
                self.tau
            )));
        }
        dot(row, &self.coefficients)
    }
}

impl LogQuantileModel for FittedPqr {
    fn log_quantile(&self, row: &[f64], tau: f64) -> Result<f64> {
        dot(row, &self.coefficients_at(tau))
    }
}

/// Value-at-Risk of the positive loss: `exp(x'γ(τ))`.
pub fn predict_var<M: LogQuantileModel + ?Sized>(model: &M, row: &[f64], tau: f64) -> Result<f64> {
    check_level(tau)?;
    Ok(model.log_quantile(row, tau)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_design(n: usize) -> DesignMatrix {
        DesignMatrix {
            matrix: DMatrix::from_element(n, 1, 1.0),
            column_names: vec!["(Intercept)".into()],
        }
    }

    fn fast() -> QuantileOptions {
        QuantileOptions {
            restarts: 0,
            ..QuantileOptions::default()
        }
    }

    #[test]
    fn median_of_odd_sample() {
        let y = [5.0, 1.0, 9.0, 3.0, 7.0];
        let fit = fit_quantile(&intercept_design(5), &y, 0.5, &QuantileOptions::default()).unwrap();
        assert!((fit.coefficients[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn upper_quartile_of_four() {
        // exact minimizers of Σρ_0.75 over {1,2,3,4}: the order statistic 3
        let y = [1.0, 2.0, 3.0, 4.0];
        let fit = fit_quantile(&intercept_design(4), &y, 0.75, &QuantileOptions::default()).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-3, "{}", fit.coefficients[0]);
    }

    #[test]
    fn class_levels() {
        let levels = class_quantile_levels(0.95, &[0.798, 0.96, 0.0]);
        assert!((levels.tau_star[0].unwrap() - 0.752_475_247_524_752_5).abs() < 1e-12);
        assert_eq!(levels.tau_star[1], None);
        assert_eq!(levels.tau_star[2], Some(0.95));
        assert_eq!(levels.infeasible_count(), 1);
    }

    #[test]
    fn predict_var_back_transforms() {
        let fit = FittedQuantile {
            tau: 0.9,
            column_names: vec!["(Intercept)".into()],
            coefficients: vec![0.0],
            objective_value: 0.0,
            iterations: 0,
            converged: true,
        };
        assert_eq!(predict_var(&fit, &[1.0], 0.9).unwrap(), 1.0);
        let fit = FittedQuantile {
            coefficients: vec![7.0],
            ..fit
        };
        assert!((predict_var(&fit, &[1.0], 0.9).unwrap() - 1096.633_158_428_458_6).abs() < 1e-9);
        assert!(predict_var(&fit, &[1.0], 1.2).is_err());
        assert!(predict_var(&fit, &[1.0], 0.5).is_err());
    }

    #[test]
    fn shifted_legendre_values() {
        let b = basis_values(0.3, 3, PqrBasis::ShiftedLegendre);
        let t: f64 = 0.3;
        let expected = [
            1.0,
            2.0 * t - 1.0,
            6.0 * t * t - 6.0 * t + 1.0,
            20.0 * t.powi(3) - 30.0 * t * t + 12.0 * t - 1.0,
        ];
        for (a, e) in b.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pqr_degree_zero_single_level_is_qr() {
        let y: Vec<f64> = (0..41).map(|i| ((i * 37) % 41) as f64 * 0.1).collect();
        let d = intercept_design(41);
        let qr = fit_quantile(&d, &y, 0.7, &fast()).unwrap();
        let pqr = fit_pqr(
            &d,
            &y,
            &PqrOptions {
                degree: 0,
                grid: vec![0.7],
                ..PqrOptions::default()
            },
        )
        .unwrap();
        assert!((pqr.objective_value - qr.objective_value).abs() <= 1e-6 * qr.objective_value.max(1.0));
        let at = pqr.coefficients_at(0.7);
        assert!((predict_var(&pqr, &[1.0], 0.7).unwrap() - at[0].exp()).abs() < 1e-12);
    }

    #[test]
    fn pqr_grid_validation() {
        let d = intercept_design(5);
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let bad = PqrOptions {
            degree: 2,
            grid: vec![0.2, 0.5, 0.8],
            ..PqrOptions::default()
        };
        assert!(fit_pqr(&d, &y, &bad).is_err());
    }
}
