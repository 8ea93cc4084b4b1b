//! Tweedie portfolios and the Monte-Carlo comparison of QR, PQR, QRII and ER.
//!
//! Each replicate draws covariates and losses from generators keyed by
//! `(master_seed, replicate, purpose)`, fits every model once and then
//! allocates against the target total of each true loading in turn, so the
//! loadings share random numbers. Replicates are reduced in index order.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{self, BisectionOptions};
use crate::data::{DesignMatrix, PolicyRecord};
use crate::error::{RatemakingError, Result};
use crate::evaluation;
use crate::expectile::{fit_expectile, ExpectileOptions};
use crate::glm::{GlmOptions, TwoPartGlm};
use crate::quantile::{self, PqrOptions, QuantileOptions};

/// Compound Poisson–Gamma law with mean `μ`, variance `φμᵖ` and `1 < p < 2`.
#[derive(Debug, Clone, Copy)]
pub struct Tweedie {
    poisson: Poisson<f64>,
    shape: f64,
    scale: f64,
}

impl Tweedie {
    pub fn new(mean: f64, power: f64, dispersion: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(RatemakingError::Domain(format!("Tweedie mean {mean} must be positive")));
        }
        if !(power > 1.0 && power < 2.0) {
            return Err(RatemakingError::Domain(format!("Tweedie power {power} outside (1, 2)")));
        }
        if !(dispersion > 0.0 && dispersion.is_finite()) {
            return Err(RatemakingError::Domain(format!("Tweedie dispersion {dispersion} must be positive")));
        }
        let lambda = Self::claim_rate(mean, power, dispersion);
        let poisson = Poisson::new(lambda).map_err(|e| RatemakingError::Domain(format!("Poisson rate {lambda}: {e}")))?;
        Ok(Self {
            poisson,
            shape: (2.0 - power) / (power - 1.0),
            scale: dispersion * (power - 1.0) * mean.powf(power - 1.0),
        })
    }

    /// Poisson rate `λ = μ^{2−p} / (φ(2 − p))`.
    pub fn claim_rate(mean: f64, power: f64, dispersion: f64) -> f64 {
        mean.powf(2.0 - power) / (dispersion * (2.0 - power))
    }
}

impl Distribution<f64> for Tweedie {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let count = self.poisson.sample(rng);
        if count == 0.0 {
            return 0.0;
        }
        // a sum of `count` iid Gamma(α, θ) claims is Gamma(count·α, θ)
        Gamma::new(count * self.shape, self.scale)
            .expect("positive shape and scale")
            .sample(rng)
    }
}

pub fn sample_tweedie<R: Rng + ?Sized>(mean: f64, power: f64, dispersion: f64, rng: &mut R) -> Result<f64> {
    Ok(Tweedie::new(mean, power, dispersion)?.sample(rng))
}

pub const STREAM_COVARIATES: u64 = 1;
pub const STREAM_LOSSES: u64 = 2;

/// Independent generator for one `(master_seed, replicate, purpose)` key.
pub fn keyed_rng(master_seed: u64, replicate: u64, purpose: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&replicate.to_le_bytes());
    seed[16..24].copy_from_slice(&purpose.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SimModel {
    QR,
    PQR,
    QRII,
    ER,
}

impl SimModel {
    pub const ALL: [SimModel; 4] = [SimModel::QR, SimModel::PQR, SimModel::QRII, SimModel::ER];

    pub fn as_str(self) -> &'static str {
        match self {
            SimModel::QR => "QR",
            SimModel::PQR => "PQR",
            SimModel::QRII => "QRII",
            SimModel::ER => "ER",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_policies: usize,
    pub replicates: usize,
    /// Success probability of each binary covariate.
    pub bernoulli_probs: Vec<f64>,
    /// Intercept followed by one coefficient per covariate, on the log-mean scale.
    pub coefficients: Vec<f64>,
    pub dispersion: f64,
    pub power: f64,
    /// True loadings `φ`; the true premium is `(1 + φ)μ`.
    pub loadings: Vec<f64>,
    pub master_seed: u64,
    pub models: Vec<SimModel>,
    /// Quantile/expectile level of the loaded principles.
    pub tau: f64,
    /// Replicate failures beyond this fraction abort the run.
    pub max_failure_fraction: f64,
    pub glm: GlmOptions,
    pub expectile: ExpectileOptions,
    pub quantile: QuantileOptions,
    pub pqr: PqrOptions,
    pub bisection: BisectionOptions,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_policies: 5000,
            replicates: 200,
            bernoulli_probs: vec![0.5, 0.6, 0.8],
            coefficients: vec![5.0, 0.5, 0.5, 0.5],
            dispersion: 120.0,
            power: 1.65,
            loadings: vec![0.05, 0.10, 0.15],
            master_seed: 20_210_401,
            models: SimModel::ALL.to_vec(),
            tau: 0.95,
            max_failure_fraction: 0.01,
            glm: GlmOptions::default(),
            expectile: ExpectileOptions::default(),
            quantile: QuantileOptions {
                restarts: 0,
                ..QuantileOptions::default()
            },
            pqr: PqrOptions::default(),
            bisection: BisectionOptions::default(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RatemakingError::Config(m));
        if self.n_policies == 0 || self.replicates == 0 {
            return bad("n_policies and replicates must be at least 1".into());
        }
        if self.bernoulli_probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad(format!("bernoulli_probs {:?} must lie in (0, 1)", self.bernoulli_probs));
        }
        if self.coefficients.len() != self.bernoulli_probs.len() + 1 {
            return bad(format!(
                "{} coefficients for {} covariates; expected an intercept plus one per covariate",
                self.coefficients.len(),
                self.bernoulli_probs.len()
            ));
        }
        if !(self.power > 1.0 && self.power < 2.0) {
            return bad(format!("power {} outside (1, 2)", self.power));
        }
        if !(self.dispersion > 0.0) {
            return bad(format!("dispersion {} must be positive", self.dispersion));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if self.loadings.is_empty() || self.models.is_empty() {
            return bad("at least one loading and one model are required".into());
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        1 << self.bernoulli_probs.len()
    }

    /// Binary label of a class, first covariate leftmost (`"101"`).
    pub fn class_label(&self, class: usize) -> String {
        let d = self.bernoulli_probs.len();
        (0..d).map(|j| if class >> (d - 1 - j) & 1 == 1 { '1' } else { '0' }).collect()
    }

    /// Design row `(1, x₁, …, x_d)` of a class.
    pub fn class_row(&self, class: usize) -> Vec<f64> {
        let d = self.bernoulli_probs.len();
        std::iter::once(1.0)
            .chain((0..d).map(|j| (class >> (d - 1 - j) & 1) as f64))
            .collect()
    }

    pub fn class_mean(&self, class: usize) -> f64 {
        self.class_row(class)
            .iter()
            .zip(&self.coefficients)
            .map(|(x, b)| x * b)
            .sum::<f64>()
            .exp()
    }
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct SimulatedPortfolio {
    pub design: DesignMatrix,
    pub class_index: Vec<usize>,
    /// True pure premium `μᵢ` per policy.
    pub means: Vec<f64>,
    pub losses: Vec<f64>,
    /// True pure premium per class.
    pub class_means: Vec<f64>,
}

impl SimulatedPortfolio {
    /// `C = Σ (1 + φ)μᵢ`.
    pub fn target_total(&self, loading: f64) -> f64 {
        (1.0 + loading) * self.means.iter().sum::<f64>()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_means.len()];
        for &c in &self.class_index {
            counts[c] += 1;
        }
        counts
    }
    /// Policy records with binary factors `x1…` labelled `0`/`1` and unit exposure.
    pub fn to_records(&self) -> Vec<PolicyRecord> {
        let d = self.design.ncols() - 1;
        (0..self.losses.len())
            .map(|i| {
                let loss = self.losses[i];
                PolicyRecord {
                    exposure: 1.0,
                    claim_occurred: loss > 0.0,
                    claim_count: u32::from(loss > 0.0),
                    aggregate_loss: loss,
                    factors: (1..=d)
                        .map(|j| (format!("x{j}"), format!("{}", self.design.matrix[(i, j)] as u8)))
                        .collect(),
                }
            })
            .collect()
    }
}

pub fn generate_portfolio(config: &SimulationConfig, replicate: usize) -> Result<SimulatedPortfolio> {
    config.validate()?;
    let d = config.bernoulli_probs.len();
    let n = config.n_policies;
    let mut cov_rng = keyed_rng(config.master_seed, replicate as u64, STREAM_COVARIATES);
    let mut loss_rng = keyed_rng(config.master_seed, replicate as u64, STREAM_LOSSES);

    let class_means: Vec<f64> = (0..config.class_count()).map(|s| config.class_mean(s)).collect();
    let laws: Vec<Tweedie> = class_means
        .iter()
        .map(|m| Tweedie::new(*m, config.power, config.dispersion))
        .collect::<Result<_>>()?;

    let mut class_index = Vec::with_capacity(n);
    let mut matrix = DMatrix::<f64>::zeros(n, d + 1);
    for i in 0..n {
        matrix[(i, 0)] = 1.0;
        let mut class = 0;
        for (j, p) in config.bernoulli_probs.iter().enumerate() {
            let x = cov_rng.random_bool(*p);
            matrix[(i, j + 1)] = f64::from(u8::from(x));
            class = class << 1 | usize::from(x);
        }
        class_index.push(class);
    }
    let means: Vec<f64> = class_index.iter().map(|&s| class_means[s]).collect();
    let losses: Vec<f64> = class_index.iter().map(|&s| laws[s].sample(&mut loss_rng)).collect();
    let column_names = std::iter::once("(Intercept)".to_string())
        .chain((1..=d).map(|j| format!("x{j}")))
        .collect();
    Ok(SimulatedPortfolio {
        design: DesignMatrix { matrix, column_names },
        class_index,
        means,
        losses,
        class_means,
    })
}

/// Errors `zₛ − ẑₛ` and fitted loading parameters of one replicate, indexed
/// `[loading][model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub errors: Vec<Vec<Vec<f64>>>,
    pub parameters: Vec<Vec<f64>>,
}

/// Fits every configured model to one replicate and prices the classes for each loading.
pub fn run_replicate(config: &SimulationConfig, replicate: usize) -> Result<ReplicateOutcome> {
    let portfolio = generate_portfolio(config, replicate)?;
    let n = config.n_policies;
    let s_count = config.class_count();
    let tau = config.tau;
    let claims: Vec<bool> = portfolio.losses.iter().map(|y| *y > 0.0).collect();
    let glm = TwoPartGlm::fit(&portfolio.design, &claims, &vec![1.0; n], &portfolio.losses, &config.glm)?;

    let rows: Vec<Vec<f64>> = (0..s_count).map(|s| config.class_row(s)).collect();
    let p_hat: Vec<f64> = rows.iter().map(|r| glm.no_claim_prob(r, 1.0)).collect::<Result<_>>()?;
    let mu_hat: Vec<f64> = rows.iter().map(|r| glm.pure_premium(r, 1.0)).collect::<Result<_>>()?;
    let levels = quantile::class_quantile_levels(tau, &p_hat);

    let positive: Vec<usize> = (0..n).filter(|&i| claims[i]).collect();
    let severity = portfolio.design.select_rows(&positive);
    let log_losses: Vec<f64> = positive.iter().map(|&i| portfolio.losses[i].ln()).collect();

    // per-class loading base `risk measure − μ̂` of the affine principles
    let mut bases: HashMap<SimModel, Vec<f64>> = HashMap::new();
    for &model in &config.models {
        let measure: Vec<f64> = match model {
            SimModel::ER => {
                let fit = fit_expectile(&portfolio.design, &portfolio.losses, tau, &config.expectile)?;
                rows.iter().map(|r| fit.predict(r)).collect::<Result<_>>()?
            }
            SimModel::QR => (0..s_count)
                .map(|s| match levels.tau_star[s] {
                    Some(t) => {
                        let fit = quantile::fit_quantile(&severity, &log_losses, t, &config.quantile)?;
                        quantile::predict_var(&fit, &rows[s], t)
                    }
                    None => Ok(0.0),
                })
                .collect::<Result<_>>()?,
            SimModel::PQR => {
                let fit = quantile::fit_pqr(&severity, &log_losses, &config.pqr)?;
                (0..s_count)
                    .map(|s| match levels.tau_star[s] {
                        Some(t) => quantile::predict_var(&fit, &rows[s], t),
                        None => Ok(0.0),
                    })
                    .collect::<Result<_>>()?
            }
            SimModel::QRII => continue,
        };
        bases.insert(model, measure.iter().zip(&mu_hat).map(|(q, m)| q - m).collect());
    }

    let pure_policy: Vec<f64> = portfolio.class_index.iter().map(|&s| mu_hat[s]).collect();
    let p_policy: Vec<f64> = portfolio.class_index.iter().map(|&s| p_hat[s]).collect();
    let qrii_cache: RefCell<HashMap<u64, Vec<f64>>> = RefCell::new(HashMap::new());
    let qrii_class_quantiles = |t: f64| -> Result<Vec<f64>> {
        if let Some(q) = qrii_cache.borrow().get(&t.to_bits()) {
            return Ok(q.clone());
        }
        let fit = quantile::fit_quantile(&severity, &log_losses, t, &config.quantile)?;
        let q: Vec<f64> = rows.iter().map(|r| quantile::predict_var(&fit, r, t)).collect::<Result<_>>()?;
        qrii_cache.borrow_mut().insert(t.to_bits(), q.clone());
        Ok(q)
    };

    let mut errors = Vec::with_capacity(config.loadings.len());
    let mut parameters = Vec::with_capacity(config.loadings.len());
    for &loading in &config.loadings {
        let target = portfolio.target_total(loading);
        let truth: Vec<f64> = portfolio.class_means.iter().map(|m| (1.0 + loading) * m).collect();
        let mut per_model = Vec::with_capacity(config.models.len());
        let mut params = Vec::with_capacity(config.models.len());
        for &model in &config.models {
            let (predicted, parameter): (Vec<f64>, f64) = if model == SimModel::QRII {
                let solution = allocation::solve_tau_tsqpp(
                    &p_policy,
                    |t| {
                        let q = qrii_class_quantiles(t)?;
                        Ok(portfolio.class_index.iter().map(|&s| q[s]).collect())
                    },
                    target,
                    &config.bisection,
                )?;
                let t = solution.result.parameter;
                let q = qrii_class_quantiles(t)?;
                ((0..s_count).map(|s| (1.0 - p_hat[s]) * q[s]).collect(), t)
            } else {
                let base = &bases[&model];
                let base_policy: Vec<f64> = portfolio.class_index.iter().map(|&s| base[s]).collect();
                let phi = allocation::solve_loading_linear(model.as_str(), &pure_policy, &base_policy, target)?.parameter;
                ((0..s_count).map(|s| mu_hat[s] + phi * base[s]).collect(), phi)
            };
            per_model.push(truth.iter().zip(&predicted).map(|(z, h)| z - h).collect());
            params.push(parameter);
        }
        errors.push(per_model);
        parameters.push(params);
    }
    Ok(ReplicateOutcome { errors, parameters })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCell {
    pub loading: f64,
    pub model: SimModel,
    pub class: String,
    pub bias: f64,
    pub mse: f64,
    /// `MSE − Bias²`.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub loading: f64,
    pub model: SimModel,
    pub mean_mse: f64,
    pub var_of_mean_mse: f64,
    /// Average fitted loading parameter (`φ̂`, or `τ̂` for QRII).
    pub mean_parameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub replicates_requested: usize,
    pub replicates_used: usize,
    pub failures: Vec<ReplicateFailure>,
    pub cells: Vec<ClassCell>,
    pub summaries: Vec<ModelSummary>,
}

impl SimulationReport {
    pub fn summary(&self, loading: f64, model: SimModel) -> Option<&ModelSummary> {
        self.summaries.iter().find(|s| s.loading == loading && s.model == model)
    }

    /// `(loading, model, class, bias, mse, var)`.
    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phi_true", "model", "class", "bias", "mse", "var"])?;
        for c in &self.cells {
            w.write_record([
                c.loading.to_string(),
                c.model.as_str().to_string(),
                c.class.clone(),
                c.bias.to_string(),
                c.mse.to_string(),
                c.variance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `(loading, model, mean_mse, var_of_mean_mse, mean_parameter)`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phi_true", "model", "mean_mse", "var_of_mean_mse", "mean_parameter"])?;
        for s in &self.summaries {
            w.write_record([
                s.loading.to_string(),
                s.model.as_str().to_string(),
                s.mean_mse.to_string(),
                s.var_of_mean_mse.to_string(),
                s.mean_parameter.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Aggregates replicate outcomes (in the given order) into the report tables.
pub fn summarize(config: &SimulationConfig, outcomes: &[ReplicateOutcome], failures: Vec<ReplicateFailure>) -> SimulationReport {
    let s_count = config.class_count();
    let t = outcomes.len() as f64;
    let mut cells = Vec::new();
    let mut summaries = Vec::new();
    for (l, &loading) in config.loadings.iter().enumerate() {
        for (m, &model) in config.models.iter().enumerate() {
            let errors: Vec<Vec<f64>> = outcomes.iter().map(|o| o.errors[l][m].clone()).collect();
            let metrics = evaluation::error_metrics(&errors).expect("replicates share the class layout");
            for (s, metric) in metrics.iter().enumerate() {
                cells.push(ClassCell {
                    loading,
                    model,
                    class: format!("Class_{}", config.class_label(s)),
                    bias: metric.bias,
                    mse: metric.mse,
                    variance: metric.variance,
                });
            }
            let per_replicate: Vec<f64> = outcomes
                .iter()
                .map(|o| o.errors[l][m].iter().map(|e| e * e).sum::<f64>() / s_count as f64)
                .collect();
            let mean_mse = per_replicate.iter().sum::<f64>() / t;
            let var_of_mean_mse = if outcomes.len() > 1 {
                per_replicate.iter().map(|v| (v - mean_mse).powi(2)).sum::<f64>() / (t * (t - 1.0))
            } else {
                f64::NAN
            };
            let mean_parameter = outcomes.iter().map(|o| o.parameters[l][m]).sum::<f64>() / t;
            summaries.push(ModelSummary {
                loading,
                model,
                mean_mse,
                var_of_mean_mse,
                mean_parameter,
            });
        }
    }
    SimulationReport {
        replicates_requested: config.replicates,
        replicates_used: outcomes.len(),
        failures,
        cells,
        summaries,
    }
}

/// Runs every replicate (in parallel) and reduces in replicate order.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let results: Vec<Result<ReplicateOutcome>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (replicate, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) if e.is_input_error() => return Err(e),
            Err(e) => failures.push(ReplicateFailure {
                replicate,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > config.max_failure_fraction * config.replicates as f64 || outcomes.is_empty() {
        return Err(RatemakingError::SimulationAborted {
            failed: failures.len(),
            total: config.replicates,
        });
    }
    Ok(summarize(config, &outcomes, failures))
}
