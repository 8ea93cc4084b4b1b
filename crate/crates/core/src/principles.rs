//! Premium principles and an empirical coherence check for the sample expectile.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RatemakingError, Result};
use crate::expectile::sample_expectile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Principle {
    /// Expected value: `(1 + φ)E`.
    Evpp,
    /// Standard deviation: `E + φ√Var`.
    Sdpp,
    /// Quantile: `E + φ(Q_τ − E)`.
    Qpp,
    /// Two-stage quantile: `(1 − p)Q_{Y*}(τ)`.
    Tsqpp,
    /// Expectile: `E + φ(v_τ − E)`.
    Epp,
}

impl Principle {
    pub fn as_str(self) -> &'static str {
        match self {
            Principle::Evpp => "EVPP",
            Principle::Sdpp => "SDPP",
            Principle::Qpp => "QPP",
            Principle::Tsqpp => "TSQPP",
            Principle::Epp => "EPP",
        }
    }
}

impl std::fmt::Display for Principle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Principle {
    type Err = RatemakingError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EVPP" => Ok(Principle::Evpp),
            "SDPP" => Ok(Principle::Sdpp),
            "QPP" => Ok(Principle::Qpp),
            "TSQPP" => Ok(Principle::Tsqpp),
            "EPP" => Ok(Principle::Epp),
            other => Err(RatemakingError::Config(format!("unknown premium principle {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuoteFlag {
    NegativeLoading,
    /// QPP weight above one extrapolates past the quantile.
    WeightAboveOne,
}

/// One risk premium split into pure premium and loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumQuote {
    pub principle: Principle,
    pub label: String,
    pub pure_premium: f64,
    pub risk_loading: f64,
    pub risk_premium: f64,
    /// `φ`, or `τ` for TSQPP.
    pub loading_parameter: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<QuoteFlag>,
}

impl PremiumQuote {
    fn from_loading(principle: Principle, pure: f64, loading: f64, parameter: f64) -> Self {
        let mut flags = Vec::new();
        if loading < 0.0 {
            flags.push(QuoteFlag::NegativeLoading);
        }
        Self {
            principle,
            label: String::new(),
            pure_premium: pure,
            risk_loading: loading,
            risk_premium: pure + loading,
            loading_parameter: parameter,
            flags,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

pub fn price_evpp(pure: f64, phi: f64) -> PremiumQuote {
    PremiumQuote::from_loading(Principle::Evpp, pure, phi * pure, phi)
}

pub fn price_sdpp(pure: f64, variance: f64, phi: f64) -> PremiumQuote {
    PremiumQuote::from_loading(Principle::Sdpp, pure, phi * variance.max(0.0).sqrt(), phi)
}

pub fn price_qpp(pure: f64, var_tau: f64, phi: f64) -> PremiumQuote {
    let mut q = PremiumQuote::from_loading(Principle::Qpp, pure, phi * (var_tau - pure), phi);
    if phi > 1.0 {
        q.flags.push(QuoteFlag::WeightAboveOne);
    }
    q
}

/// `H = (1 − p)·Q`; the loading is whatever separates `H` from the pure premium.
pub fn price_tsqpp(pure: f64, no_claim_prob: f64, var_tau_positive: f64, tau: f64) -> PremiumQuote {
    let premium = (1.0 - no_claim_prob) * var_tau_positive;
    let mut q = PremiumQuote::from_loading(Principle::Tsqpp, pure, premium - pure, tau);
    q.risk_premium = premium;
    q
}

pub fn price_epp(pure: f64, expectile_tau: f64, phi: f64) -> PremiumQuote {
    PremiumQuote::from_loading(Principle::Epp, pure, phi * (expectile_tau - pure), phi)
}

/// One row of a class premium table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPremiumRow {
    pub label: String,
    pub no_claim_prob: f64,
    pub pure_premium: f64,
    /// Risk premium per principle column, `None` where the principle is undefined for the class.
    pub premiums: Vec<Option<f64>>,
}

/// Writes `class, p_hat, pure_premium, <one column per principle>`; undefined cells are empty.
pub fn write_class_table<W: Write>(columns: &[String], rows: &[ClassPremiumRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["class".to_string(), "p_hat".into(), "pure_premium".into()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for row in rows {
        if row.premiums.len() != columns.len() {
            return Err(RatemakingError::Layout(format!(
                "class {} has {} premiums for {} columns",
                row.label,
                row.premiums.len(),
                columns.len()
            )));
        }
        let mut rec = vec![row.label.clone(), row.no_claim_prob.to_string(), row.pure_premium.to_string()];
        rec.extend(row.premiums.iter().map(|p| p.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub axiom: String,
    pub trials: usize,
    pub violations: usize,
    /// Largest observed gap, relative to the magnitude of the compared values.
    pub worst_relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub tau: f64,
    pub sample_size: usize,
    pub tolerance: f64,
    pub checks: Vec<AxiomCheck>,
    /// Human-readable description of the first violations (capped at 20).
    pub violations: Vec<String>,
}

impl CoherenceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.violations == 0)
    }
}

struct Tally {
    check: AxiomCheck,
    tolerance: f64,
}

impl Tally {
    fn new(axiom: &str, tolerance: f64) -> Self {
        Self {
            check: AxiomCheck {
                axiom: axiom.into(),
                trials: 0,
                violations: 0,
                worst_relative_gap: 0.0,
            },
            tolerance,
        }
    }

    /// Records `gap` (positive means the axiom is violated by that much).
    fn record(&mut self, gap: f64, scale: f64, detail: impl FnOnce() -> String, log: &mut Vec<String>) {
        self.check.trials += 1;
        let rel = gap / scale.max(f64::MIN_POSITIVE);
        if rel > self.check.worst_relative_gap {
            self.check.worst_relative_gap = rel;
        }
        if rel > self.tolerance {
            self.check.violations += 1;
            if log.len() < 20 {
                log.push(format!("{}: {}", self.check.axiom, detail()));
            }
        }
    }
}

/// Empirically checks the coherence axioms and the downside/upside-mean
/// identity of the sample `tau`-expectile on `sample`.
///
/// Every trial draws from a generator seeded by `seed`, so the report is reproducible.
pub fn coherence_report(sample: &[f64], tau: f64, trials: usize, seed: u64) -> Result<CoherenceReport> {
    const TOLERANCE: f64 = 1e-8;
    if sample.is_empty() {
        return Err(RatemakingError::Domain("coherence check needs a non-empty sample".into()));
    }
    if !(0.5..1.0).contains(&tau) {
        return Err(RatemakingError::Domain(format!("coherence holds for tau in [0.5, 1), got {tau}")));
    }
    if let Some(v) = sample.iter().find(|v| !v.is_finite()) {
        return Err(RatemakingError::Domain(format!("non-finite sample value {v}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::new();
    let e = |v: &[f64]| sample_expectile(v, tau);
    let base = e(sample);
    let spread = sample.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);

    let mut translation = Tally::new("translation invariance", TOLERANCE);
    let mut homogeneity = Tally::new("positive homogeneity", TOLERANCE);
    let mut monotonicity = Tally::new("monotonicity", TOLERANCE);
    let mut subadditivity = Tally::new("subadditivity", TOLERANCE);

    let mut buf = vec![0.0; sample.len()];
    for _ in 0..trials {
        let h = rng.random_range(-spread..spread);
        buf.iter_mut().zip(sample).for_each(|(b, v)| *b = v + h);
        let lhs = e(&buf);
        let scale = lhs.abs().max((base + h).abs()).max(spread);
        translation.record((lhs - base - h).abs(), scale, || format!("h={h}: {lhs} vs {}", base + h), &mut log);

        let lambda = rng.random_range(0.0..10.0);
        buf.iter_mut().zip(sample).for_each(|(b, v)| *b = lambda * v);
        let lhs = e(&buf);
        let scale = lhs.abs().max((lambda * base).abs()).max(lambda * spread);
        homogeneity.record(
            (lhs - lambda * base).abs(),
            scale,
            || format!("lambda={lambda}: {lhs} vs {}", lambda * base),
            &mut log,
        );

        let bump = rng.random_range(0.0..spread);
        buf.iter_mut()
            .zip(sample)
            .for_each(|(b, v)| *b = v + bump * rng.random::<f64>());
        let upper = e(&buf);
        monotonicity.record(base - upper, base.abs().max(upper.abs()).max(spread), || {
            format!("dominating sample has expectile {upper} below {base}")
        }, &mut log);

        // random permutation coupling of the sample with itself
        let mut partner = sample.to_vec();
        partner.shuffle(&mut rng);
        buf.iter_mut()
            .zip(sample.iter().zip(&partner))
            .for_each(|(b, (x, y))| *b = x + y);
        let joint = e(&buf);
        let sum = base + e(&partner);
        subadditivity.record(joint - sum, joint.abs().max(sum.abs()).max(spread), || {
            format!("e(X+Y)={joint} exceeds e(X)+e(Y)={sum}")
        }, &mut log);
    }

    // comonotonic coupling: X paired with itself, sorted
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let doubled: Vec<f64> = sorted.iter().map(|v| 2.0 * v).collect();
    let joint = e(&doubled);
    subadditivity.record(joint - 2.0 * base, joint.abs().max(spread), || {
        format!("comonotonic e(2X)={joint} exceeds 2e(X)={}", 2.0 * base)
    }, &mut log);

    let mut identity = Tally::new("downside/upside mean identity", TOLERANCE);
    let (mut n_up, mut s_up, mut n_dn, mut s_dn) = (0usize, 0.0, 0usize, 0.0);
    for &v in sample {
        if v > base {
            n_up += 1;
            s_up += v;
        } else {
            n_dn += 1;
            s_dn += v;
        }
    }
    let n = sample.len() as f64;
    let f = n_dn as f64 / n;
    let eta = tau * (1.0 - f) / (tau * (1.0 - f) + (1.0 - tau) * f);
    let upside = if n_up > 0 { s_up / n_up as f64 } else { 0.0 };
    let downside = s_dn / n_dn.max(1) as f64;
    let recomposed = eta * upside + (1.0 - eta) * downside;
    identity.record((recomposed - base).abs(), base.abs().max(spread), || {
        format!("eta-weighted means give {recomposed}, expectile is {base}")
    }, &mut log);

    Ok(CoherenceReport {
        tau,
        sample_size: sample.len(),
        tolerance: TOLERANCE,
        checks: vec![
            translation.check,
            homogeneity.check,
            monotonicity.check,
            subadditivity.check,
            identity.check,
        ],
        violations: log,
    })
}
