//! Calibrating the loading parameter so portfolio premiums sum to a target total.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{RatemakingError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub principle: String,
    /// `φ` for the affine principles, `τ` for TSQPP.
    pub parameter: f64,
    pub target: f64,
    pub achieved: f64,
    /// `achieved − target`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl AllocationResult {
    pub fn relative_residual(&self) -> f64 {
        self.residual.abs() / self.target.abs()
    }
}

/// Closed-form `φ = (C − Σ pure) / Σ base` for principles affine in `φ`.
///
/// A negative `φ` (target below the pure-premium total) is returned as is.
pub fn solve_loading_linear(principle: &str, pure: &[f64], loading_base: &[f64], target: f64) -> Result<AllocationResult> {
    if pure.len() != loading_base.len() {
        return Err(RatemakingError::Layout("pure premium and loading base differ in length".into()));
    }
    let pure_total: f64 = pure.iter().sum();
    let base_total: f64 = loading_base.iter().sum();
    if base_total == 0.0 || !base_total.is_finite() {
        return Err(RatemakingError::Degenerate(format!(
            "loading base sums to {base_total}; no loading reaches the target"
        )));
    }
    let phi = (target - pure_total) / base_total;
    let achieved: f64 = pure.iter().zip(loading_base).map(|(e, b)| e + phi * b).sum();
    Ok(AllocationResult {
        principle: principle.into(),
        parameter: phi,
        target,
        achieved,
        residual: achieved - target,
        iterations: 0,
        converged: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BisectionOptions {
    pub bracket: (f64, f64),
    pub relative_tolerance: f64,
    pub max_iterations: usize,
    /// Refits are cached by `τ` rounded to this resolution.
    pub cache_resolution: f64,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self {
            bracket: (0.01, 0.99),
            relative_tolerance: 1e-6,
            max_iterations: 60,
            cache_resolution: 1e-6,
        }
    }
}

/// Per-iterate diagnostics of the TSQPP bisection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsqppSolution {
    pub result: AllocationResult,
    pub evaluations: Vec<(f64, f64)>,
    pub refits: usize,
    /// Iterates whose total fell below the total at a smaller τ.
    pub monotonicity_violations: usize,
}

/// Bisection for `τ` in `Σ (1 − pᵢ)·Qᵢ(τ) = C`, where `refit(τ)` returns the
/// per-policy conditional quantiles `Qᵢ(τ)` of the positive loss.
pub fn solve_tau_tsqpp<F>(no_claim_probs: &[f64], mut refit: F, target: f64, options: &BisectionOptions) -> Result<TsqppSolution>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let (mut lo, mut hi) = options.bracket;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(RatemakingError::Domain(format!("bracket ({lo}, {hi}) not inside (0, 1)")));
    }
    let mut cache: HashMap<i64, f64> = HashMap::new();
    let mut refits = 0;
    let mut evaluations = Vec::new();
    let mut total_at = |tau: f64, evaluations: &mut Vec<(f64, f64)>| -> Result<f64> {
        let key = (tau / options.cache_resolution).round() as i64;
        if let Some(t) = cache.get(&key) {
            evaluations.push((tau, *t));
            return Ok(*t);
        }
        let q = refit(tau)?;
        refits += 1;
        if q.len() != no_claim_probs.len() {
            return Err(RatemakingError::Layout(format!(
                "refit returned {} quantiles for {} policies",
                q.len(),
                no_claim_probs.len()
            )));
        }
        let total: f64 = no_claim_probs.iter().zip(&q).map(|(p, q)| (1.0 - p) * q).sum();
        cache.insert(key, total);
        evaluations.push((tau, total));
        Ok(total)
    };

    let total_lo = total_at(lo, &mut evaluations)?;
    let total_hi = total_at(hi, &mut evaluations)?;
    if (total_lo - target) * (total_hi - target) > 0.0 {
        return Err(RatemakingError::Bracket {
            lo,
            hi,
            total_lo,
            total_hi,
            target,
        });
    }
    let tolerance = options.relative_tolerance * target.abs();
    let (mut g_lo, mut mid, mut total) = (total_lo - target, 0.5 * (lo + hi), f64::NAN);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        total = total_at(mid, &mut evaluations)?;
        let g = total - target;
        if g.abs() <= tolerance {
            converged = true;
            break;
        }
        if g * g_lo > 0.0 {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
    }
    let mut sorted = evaluations.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.dedup_by(|a, b| a.0 == b.0);
    let monotonicity_violations = sorted.windows(2).filter(|w| w[1].1 < w[0].1).count();
    Ok(TsqppSolution {
        result: AllocationResult {
            principle: "TSQPP".into(),
            parameter: mid,
            target,
            achieved: total,
            residual: total - target,
            iterations,
            converged,
        },
        evaluations,
        refits,
        monotonicity_violations,
    })
}

pub fn write_result_json<W: std::io::Write>(result: &AllocationResult, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, result)?;
    Ok(())
}
