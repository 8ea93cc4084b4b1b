//! Batch commands behind the `ratemaking` binary: configuration, case-study
//! fitting and rating, the simulation study, Gini comparison and the
//! coherence check. Every command writes into the configured output
//! directory and finishes with a manifest of hashes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocation::{self, AllocationResult, BisectionOptions, TsqppSolution};
use crate::data::{self, DesignMatrix, Factor, FactorSpec, PolicyRecord, Schema, TariffClass};
use crate::error::{RatemakingError, Result};
use crate::evaluation::{self, GiniMatrix, GiniOptions};
use crate::expectile::{self, ExpectileOptions, FittedExpectile};
use crate::glm::{GlmOptions, TwoPartGlm};
use crate::principles::{self, ClassPremiumRow, CoherenceReport, PremiumQuote, Principle};
use crate::quantile::{self, FittedPqr, FittedQuantile, PqrOptions, QuantileOptions};
use crate::simulator::{self, SimulationConfig, Tweedie};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: Schema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    pub name: String,
    pub reference: String,
    /// Level order; inferred from the data when absent.
    #[serde(default)]
    pub levels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceConfig {
    pub taus: Vec<f64>,
    pub trials: usize,
    pub sample_size: usize,
    pub mean: f64,
    pub power: f64,
    pub dispersion: f64,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        Self {
            taus: vec![0.5, 0.75, 0.9, 0.95],
            trials: 1000,
            sample_size: 2000,
            mean: 300.0,
            power: 1.65,
            dispersion: 120.0,
        }
    }
}

/// The single JSON document driving every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetConfig>,
    pub factors: Vec<FactorConfig>,
    pub principles: Vec<Principle>,
    pub tau: f64,
    pub target_total: Option<f64>,
    pub expectile_grid: Vec<f64>,
    /// Two-sided significance level of the coefficient intervals.
    pub significance: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Drop policies whose quantile premium is undefined or non-positive before the Gini comparison.
    pub drop_infeasible: bool,
    /// Per-policy `τ*` levels are rounded to this grid before the single-level quantile refits.
    pub policy_tau_resolution: f64,
    pub glm: GlmOptions,
    pub expectile: ExpectileOptions,
    pub quantile: QuantileOptions,
    pub pqr: PqrOptions,
    pub bisection: BisectionOptions,
    pub gini: GiniOptions,
    pub simulation: SimulationConfig,
    pub coherence: CoherenceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            factors: Vec::new(),
            principles: vec![Principle::Epp, Principle::Evpp, Principle::Sdpp, Principle::Qpp, Principle::Tsqpp],
            tau: 0.95,
            target_total: None,
            expectile_grid: (1..20).map(|i| i as f64 * 0.05).collect(),
            significance: 0.05,
            seed: 2021,
            output_dir: PathBuf::from("out"),
            drop_infeasible: false,
            policy_tau_resolution: 0.005,
            glm: GlmOptions::default(),
            expectile: ExpectileOptions::default(),
            quantile: QuantileOptions::default(),
            pqr: PqrOptions::default(),
            bisection: BisectionOptions::default(),
            gini: GiniOptions::default(),
            simulation: SimulationConfig::default(),
            coherence: CoherenceConfig::default(),
        }
    }
}

/// Command-line flags that take precedence over the config document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tau: Option<f64>,
    pub total_premium: Option<f64>,
    pub splits: Option<usize>,
    pub drop_infeasible: bool,
}

impl RunConfig {
    /// Reads a config file; relative dataset paths resolve against the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RatemakingError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| RatemakingError::Config(format!("invalid config `{}`: {e}", path.display())))?;
        if let (Some(ds), Some(dir)) = (config.dataset.as_mut(), path.parent()) {
            if ds.path.is_relative() {
                ds.path = dir.join(&ds.path);
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
            self.simulation.master_seed = seed;
            self.gini.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(tau) = o.tau {
            self.tau = tau;
            self.simulation.tau = tau;
        }
        if let Some(total) = o.total_premium {
            self.target_total = Some(total);
        }
        if let Some(splits) = o.splits {
            self.gini.n_splits = splits;
        }
        if o.drop_infeasible {
            self.drop_infeasible = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RatemakingError::Config(m));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if let Some(c) = self.target_total {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("target total {c} must be positive"));
            }
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return bad(format!("significance {} outside (0, 1)", self.significance));
        }
        if !(self.policy_tau_resolution > 0.0 && self.policy_tau_resolution < 0.5) {
            return bad(format!("policy tau resolution {} outside (0, 0.5)", self.policy_tau_resolution));
        }
        if self.gini.n_splits == 0 {
            return bad("gini splits must be at least 1".into());
        }
        Ok(())
    }

    fn dataset(&self) -> Result<&DatasetConfig> {
        let ds = self
            .dataset
            .as_ref()
            .ok_or_else(|| RatemakingError::Config("config has no `dataset` section".into()))?;
        if !ds.path.is_file() {
            return Err(RatemakingError::Config(format!("dataset `{}` does not exist", ds.path.display())));
        }
        Ok(ds)
    }

    fn target(&self) -> Result<f64> {
        self.target_total
            .ok_or_else(|| RatemakingError::Config("no target total; set `target_total` or pass --total-premium".into()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hash of the effective configuration; the output location is excluded.
pub fn config_hash(config: &RunConfig) -> Result<String> {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    Ok(sha256_hex(&serde_json::to_vec(&c)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

/// Provenance of one command run. Carries no timestamps so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub outputs: Vec<ManifestEntry>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn finish(mut self, command: &str, config: &RunConfig) -> Result<Vec<PathBuf>> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for path in &self.files {
            outputs.push(ManifestEntry {
                file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                sha256: sha256_hex(&std::fs::read(path)?),
            });
        }
        outputs.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config_hash(config)?,
            seed: config.seed,
            outputs,
        };
        self.json(&format!("{command}{MANIFEST_SUFFIX}"), &manifest)?;
        Ok(self.files)
    }
}

fn read_model<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let file = File::open(&path)
        .map_err(|e| RatemakingError::Config(format!("cannot open `{}` ({e}); run `fit` first", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// A loaded portfolio with its design and tariff classes.
pub struct CaseData {
    pub records: Vec<PolicyRecord>,
    pub spec: FactorSpec,
    pub design: DesignMatrix,
    pub classes: Vec<TariffClass>,
    pub class_of: Vec<usize>,
}

impl CaseData {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let ds = config.dataset()?;
        if config.factors.is_empty() {
            return Err(RatemakingError::Config("config lists no rating factors".into()));
        }
        let mut schema = ds.schema.clone();
        if schema.factors.is_empty() {
            schema.factors = config.factors.iter().map(|f| f.name.clone()).collect();
        }
        let records = data::load_policies(File::open(&ds.path)?, &schema)?;
        Self::from_records(records, &config.factors)
    }

    pub fn from_records(records: Vec<PolicyRecord>, factors: &[FactorConfig]) -> Result<Self> {
        let spec = if factors.iter().all(|f| f.levels.is_some()) {
            FactorSpec::new(
                factors
                    .iter()
                    .map(|f| Factor {
                        name: f.name.clone(),
                        levels: f.levels.clone().unwrap_or_default(),
                        reference: f.reference.clone(),
                    })
                    .collect(),
            )?
        } else {
            let refs: Vec<(String, String)> = factors.iter().map(|f| (f.name.clone(), f.reference.clone())).collect();
            FactorSpec::infer(&records, &refs)?
        };
        let design = data::encode_design(&records, &spec)?;
        let classes = data::enumerate_tariff_classes(&spec)?;
        let class_of = data::class_index_of(&records, &spec)?;
        Ok(Self {
            records,
            spec,
            design,
            classes,
            class_of,
        })
    }

    pub fn claims(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.claim_occurred && r.aggregate_loss > 0.0).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.aggregate_loss).collect()
    }

    /// Design rows and log losses of the policies with a positive loss.
    pub fn severity(&self) -> (DesignMatrix, Vec<f64>) {
        let positive: Vec<usize> = (0..self.records.len()).filter(|&i| self.records[i].aggregate_loss > 0.0).collect();
        let logs = positive.iter().map(|&i| self.records[i].aggregate_loss.ln()).collect();
        (self.design.select_rows(&positive), logs)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &s in &self.class_of {
            counts[s] += 1;
        }
        counts
    }
}

/// ER fit at the pricing level plus the coefficient path over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectileModel {
    pub fit: FittedExpectile,
    pub curve: Vec<FittedExpectile>,
    pub crossing_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrClassFit {
    pub class_label: String,
    pub no_claim_prob: f64,
    /// `None` when the class is infeasible at `tau`.
    pub tau_star: Option<f64>,
    pub fit: Option<FittedQuantile>,
}

/// One single-level quantile regression per tariff class level `τ*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrModel {
    pub tau: f64,
    pub classes: Vec<QrClassFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqrModel {
    pub tau: f64,
    pub fit: FittedPqr,
    pub monotonicity_violations: usize,
}

/// Quantile regression at the level that allocates the target total, or at
/// the configured `tau` when no target is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QriiModel {
    pub allocation: Option<TsqppSolution>,
    pub fit: FittedQuantile,
}

/// Class-level quantities at exposure 1 shared by `fit` and `rate`.
struct ClassView {
    rows: Vec<Vec<f64>>,
    p_hat: Vec<f64>,
    pure: Vec<f64>,
    variance: Vec<f64>,
}

impl ClassView {
    fn new(case: &CaseData, glm: &TwoPartGlm) -> Result<Self> {
        let rows: Vec<Vec<f64>> = case.classes.iter().map(|c| c.representative_row.clone()).collect();
        let p_hat = rows.iter().map(|r| glm.no_claim_prob(r, 1.0)).collect::<Result<_>>()?;
        let pure = rows.iter().map(|r| glm.pure_premium(r, 1.0)).collect::<Result<_>>()?;
        let variance = rows.iter().map(|r| glm.variance(r, 1.0)).collect::<Result<_>>()?;
        Ok(Self {
            rows,
            p_hat,
            pure,
            variance,
        })
    }

    fn per_policy(&self, case: &CaseData, values: &[f64]) -> Vec<f64> {
        case.class_of.iter().map(|&s| values[s]).collect()
    }
}

fn solve_qrii(
    case: &CaseData,
    view: &ClassView,
    severity: &(DesignMatrix, Vec<f64>),
    target: f64,
    config: &RunConfig,
) -> Result<(TsqppSolution, FittedQuantile)> {
    let p_policy = view.per_policy(case, &view.p_hat);
    let refit = |t: f64| -> Result<Vec<f64>> {
        let fit = quantile::fit_quantile(&severity.0, &severity.1, t, &config.quantile)?;
        let q: Vec<f64> = view.rows.iter().map(|r| quantile::predict_var(&fit, r, t)).collect::<Result<_>>()?;
        Ok(view.per_policy(case, &q))
    };
    let solution = allocation::solve_tau_tsqpp(&p_policy, refit, target, &config.bisection)?;
    let fit = quantile::fit_quantile(&severity.0, &severity.1, solution.result.parameter, &config.quantile)?;
    Ok((solution, fit))
}

/// Fits the two-part GLM, ER (with its coefficient path), QR per class level,
/// PQR and QRII, and writes one model document each.
pub fn cmd_fit(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let case = CaseData::load(config)?;
    let n = case.records.len();
    let claims = case.claims();
    let exposure: Vec<f64> = case.records.iter().map(|r| r.exposure).collect();
    let losses = case.losses();
    let glm = TwoPartGlm::fit(&case.design, &claims, &exposure, &losses, &config.glm)?;
    let view = ClassView::new(&case, &glm)?;

    let mut grid = config.expectile_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let curve = expectile::expectile_curve(&case.design, &losses, &grid, &config.expectile)?;
    let er = ExpectileModel {
        fit: expectile::fit_expectile(&case.design, &losses, config.tau, &config.expectile)?,
        crossing_violations: expectile::crossing_violations(&curve, &case.design),
        curve,
    };

    let severity = case.severity();
    let levels = quantile::class_quantile_levels(config.tau, &view.p_hat);
    let qr_fits: Vec<Option<FittedQuantile>> = levels
        .tau_star
        .par_iter()
        .map(|t| t.map(|t| quantile::fit_quantile(&severity.0, &severity.1, t, &config.quantile)).transpose())
        .collect::<Result<_>>()?;
    let qr = QrModel {
        tau: config.tau,
        classes: case
            .classes
            .iter()
            .zip(qr_fits)
            .enumerate()
            .map(|(s, (c, fit))| QrClassFit {
                class_label: c.class_label.clone(),
                no_claim_prob: view.p_hat[s],
                tau_star: levels.tau_star[s],
                fit,
            })
            .collect(),
    };

    let pqr_fit = quantile::fit_pqr(&severity.0, &severity.1, &config.pqr)?;
    let pqr = PqrModel {
        tau: config.tau,
        monotonicity_violations: pqr_fit.monotonicity_violations(&severity.0),
        fit: pqr_fit,
    };

    let qrii = match config.target_total {
        Some(target) => {
            let (solution, fit) = solve_qrii(&case, &view, &severity, target, config)?;
            QriiModel {
                allocation: Some(solution),
                fit,
            }
        }
        None => QriiModel {
            allocation: None,
            fit: quantile::fit_quantile(&severity.0, &severity.1, config.tau, &config.quantile)?,
        },
    };

    let mut out = Outputs::new(&config.output_dir)?;
    out.json("glm.json", &glm)?;
    out.write("glm_coefficients.csv", |w| write_glm_coefficients(&glm, config.significance, w))?;
    out.json("expectile.json", &er)?;
    out.write("expectile_curve.csv", |w| expectile::write_curve_csv(&er.curve, config.significance, w))?;
    out.json("qr.json", &qr)?;
    out.json("pqr.json", &pqr)?;
    out.json("qrii.json", &qrii)?;
    out.json(
        "fit_summary.json",
        &serde_json::json!({
            "policies": n,
            "claimants": severity.1.len(),
            "factor_spec": case.spec,
            "infeasible_classes": levels.infeasible_count(),
        }),
    )?;
    out.finish("fit", config)
}

fn write_glm_coefficients<W: Write>(glm: &TwoPartGlm, significance: f64, out: W) -> Result<()> {
    let z = crate::stats::normal_quantile(1.0 - significance / 2.0);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["part", "coefficient_name", "estimate", "se", "ci_lo", "ci_hi"])?;
    for (part, fit) in [("logistic", &glm.logistic), ("gamma", &glm.gamma)] {
        let se = fit.standard_errors();
        for (j, name) in fit.column_names.iter().enumerate() {
            let b = fit.coefficients[j];
            w.write_record([
                part.to_string(),
                name.clone(),
                b.to_string(),
                se[j].to_string(),
                (b - z * se[j]).to_string(),
                (b + z * se[j]).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Premiums for one class under every column of the rating table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassQuotes {
    pub class_label: String,
    pub policies: usize,
    pub no_claim_prob: f64,
    pub pure_premium: f64,
    /// Quantile premiums use a zero quantile here.
    pub quantile_infeasible: bool,
    pub quotes: Vec<PremiumQuote>,
}

/// Output of `rate`: allocated parameters and the class table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub target_total: f64,
    pub pure_total: f64,
    pub allocations: Vec<AllocationResult>,
    pub tsqpp: Option<TsqppSolution>,
    pub classes: Vec<ClassQuotes>,
}

impl RateReport {
    pub fn parameter(&self, column: &str) -> Option<f64> {
        self.allocations.iter().find(|a| a.principle == column).map(|a| a.parameter)
    }
}

/// Table columns in output order: (column name, principle).
fn rate_columns(principles: &[Principle]) -> Vec<(&'static str, Principle)> {
    let all = [
        ("ER-EPP", Principle::Epp),
        ("GLM-EVPP", Principle::Evpp),
        ("GLM-SDPP", Principle::Sdpp),
        ("QR-QPP", Principle::Qpp),
        ("PQR-QPP", Principle::Qpp),
        ("QRII-TSQPP", Principle::Tsqpp),
    ];
    all.into_iter().filter(|(_, p)| principles.contains(p)).collect()
}

/// Allocates every configured principle against the target total (policies
/// priced at exposure 1) and prices the tariff classes.
pub fn rate(config: &RunConfig, case: &CaseData) -> Result<RateReport> {
    config.validate()?;
    let target = config.target()?;
    let dir = &config.output_dir;
    let glm: TwoPartGlm = read_model(dir, "glm.json")?;
    let er: ExpectileModel = read_model(dir, "expectile.json")?;
    let qr: QrModel = read_model(dir, "qr.json")?;
    let pqr: PqrModel = read_model(dir, "pqr.json")?;
    for (name, tau) in [("expectile", er.fit.tau), ("qr", qr.tau), ("pqr", pqr.tau)] {
        if (tau - config.tau).abs() > 1e-12 {
            return Err(RatemakingError::Config(format!(
                "{name} model was fitted at tau {tau}, config asks for {}; rerun `fit`",
                config.tau
            )));
        }
    }
    if qr.classes.len() != case.classes.len() {
        return Err(RatemakingError::Layout("qr model and data disagree on the tariff classes".into()));
    }
    let view = ClassView::new(case, &glm)?;
    let s_count = case.classes.len();
    let levels = quantile::class_quantile_levels(config.tau, &view.p_hat);

    let expectile: Vec<f64> = view.rows.iter().map(|r| er.fit.predict(r)).collect::<Result<_>>()?;
    let qr_var: Vec<f64> = (0..s_count)
        .map(|s| match (&qr.classes[s].fit, qr.classes[s].tau_star) {
            (Some(fit), Some(t)) => quantile::predict_var(fit, &view.rows[s], t),
            _ => Ok(0.0),
        })
        .collect::<Result<_>>()?;
    let pqr_var: Vec<f64> = (0..s_count)
        .map(|s| match levels.tau_star[s] {
            Some(t) => quantile::predict_var(&pqr.fit, &view.rows[s], t),
            None => Ok(0.0),
        })
        .collect::<Result<_>>()?;

    let pure_policy = view.per_policy(case, &view.pure);
    let columns = rate_columns(&config.principles);
    let mut allocations = Vec::new();
    let mut tsqpp = None;
    let mut qrii_var = vec![0.0; s_count];
    for &(name, principle) in &columns {
        let base: Vec<f64> = match name {
            "ER-EPP" => expectile.iter().zip(&view.pure).map(|(v, e)| v - e).collect(),
            "GLM-EVPP" => view.pure.clone(),
            "GLM-SDPP" => view.variance.iter().map(|v| v.max(0.0).sqrt()).collect(),
            "QR-QPP" => qr_var.iter().zip(&view.pure).map(|(q, e)| q - e).collect(),
            "PQR-QPP" => pqr_var.iter().zip(&view.pure).map(|(q, e)| q - e).collect(),
            _ => {
                let severity = case.severity();
                let (solution, fit) = solve_qrii(case, &view, &severity, target, config)?;
                let t = solution.result.parameter;
                qrii_var = view.rows.iter().map(|r| quantile::predict_var(&fit, r, t)).collect::<Result<_>>()?;
                let mut result = solution.result.clone();
                result.principle = name.into();
                allocations.push(result);
                tsqpp = Some(solution);
                continue;
            }
        };
        let mut result =
            allocation::solve_loading_linear(principle.as_str(), &pure_policy, &view.per_policy(case, &base), target)?;
        result.principle = name.into();
        allocations.push(result);
    }

    let counts = case.class_counts();
    let classes = (0..s_count)
        .map(|s| {
            let e = view.pure[s];
            let quotes = allocations
                .iter()
                .map(|a| {
                    let phi = a.parameter;
                    let q = match a.principle.as_str() {
                        "ER-EPP" => principles::price_epp(e, expectile[s], phi),
                        "GLM-EVPP" => principles::price_evpp(e, phi),
                        "GLM-SDPP" => principles::price_sdpp(e, view.variance[s], phi),
                        "QR-QPP" => principles::price_qpp(e, qr_var[s], phi),
                        "PQR-QPP" => principles::price_qpp(e, pqr_var[s], phi),
                        _ => principles::price_tsqpp(e, view.p_hat[s], qrii_var[s], phi),
                    };
                    q.with_label(a.principle.clone())
                })
                .collect();
            ClassQuotes {
                class_label: case.classes[s].class_label.clone(),
                policies: counts[s],
                no_claim_prob: view.p_hat[s],
                pure_premium: e,
                quantile_infeasible: !levels.is_feasible(s),
                quotes,
            }
        })
        .collect();
    Ok(RateReport {
        target_total: target,
        pure_total: pure_policy.iter().sum(),
        allocations,
        tsqpp,
        classes,
    })
}

/// Runs [`rate`] and writes the class premium table, loadings and allocation results.
pub fn cmd_rate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let case = CaseData::load(config)?;
    let report = rate(config, &case)?;
    let columns: Vec<String> = report.allocations.iter().map(|a| a.principle.clone()).collect();
    let table = |value: fn(&PremiumQuote) -> f64| -> Vec<ClassPremiumRow> {
        report
            .classes
            .iter()
            .map(|c| ClassPremiumRow {
                label: c.class_label.clone(),
                no_claim_prob: c.no_claim_prob,
                pure_premium: c.pure_premium,
                premiums: c.quotes.iter().map(|q| Some(value(q))).collect(),
            })
            .collect()
    };
    let premium_rows = table(|q| q.risk_premium);
    let loading_rows = table(|q| q.risk_loading);
    let mut out = Outputs::new(&config.output_dir)?;
    out.write("class_premiums.csv", |w| principles::write_class_table(&columns, &premium_rows, w))?;
    out.write("class_loadings.csv", |w| principles::write_class_table(&columns, &loading_rows, w))?;
    out.json("allocation.json", &report.allocations)?;
    out.json("rate.json", &report)?;
    out.finish("rate", config)
}

/// Runs the simulation study described by `config.simulation`.
pub fn cmd_simulate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let report = simulator::run_simulation(&config.simulation)?;
    let mut out = Outputs::new(&config.output_dir)?;
    out.write("simulation_cells.csv", |w| report.write_cells_csv(w))?;
    out.write("simulation_summary.csv", |w| report.write_summary_csv(w))?;
    out.json("simulation.json", &report)?;
    out.finish("simulate", config)
}

/// Per-policy premiums of the six compared models at actual exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyPremiums {
    pub models: Vec<(String, Vec<f64>)>,
    pub losses: Vec<f64>,
    /// Original row indices (0-based) of the retained policies.
    pub kept: Vec<usize>,
    pub dropped: usize,
}

/// Prices every policy with its own exposure using the parameters allocated by `rate`.
pub fn policy_premiums(config: &RunConfig, case: &CaseData) -> Result<PolicyPremiums> {
    let dir = &config.output_dir;
    let glm: TwoPartGlm = read_model(dir, "glm.json")?;
    let er: ExpectileModel = read_model(dir, "expectile.json")?;
    let pqr: PqrModel = read_model(dir, "pqr.json")?;
    let allocations: Vec<AllocationResult> = read_model(dir, "allocation.json")
        .map_err(|e| RatemakingError::Config(format!("{e}; run `rate` before `gini`")))?;
    let parameter = |name: &str| -> Result<f64> {
        allocations
            .iter()
            .find(|a| a.principle == name)
            .map(|a| a.parameter)
            .ok_or_else(|| RatemakingError::Config(format!("allocation.json lacks {name}; include its principle when rating")))
    };
    let (phi_evpp, phi_sdpp, phi_qr, phi_pqr, phi_epp, tau_qrii) = (
        parameter("GLM-EVPP")?,
        parameter("GLM-SDPP")?,
        parameter("QR-QPP")?,
        parameter("PQR-QPP")?,
        parameter("ER-EPP")?,
        parameter("QRII-TSQPP")?,
    );

    let n = case.records.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| case.design.row(i)).collect();
    let p: Vec<f64> = (0..n)
        .map(|i| glm.no_claim_prob(&rows[i], case.records[i].exposure))
        .collect::<Result<_>>()?;
    let pure: Vec<f64> = (0..n)
        .map(|i| glm.pure_premium(&rows[i], case.records[i].exposure))
        .collect::<Result<_>>()?;
    let variance: Vec<f64> = (0..n)
        .map(|i| glm.variance(&rows[i], case.records[i].exposure))
        .collect::<Result<_>>()?;

    let resolution = config.policy_tau_resolution;
    let grid_key = |t: f64| ((t / resolution).round() as i64).max(1);
    let stars: Vec<Option<f64>> = p.iter().map(|&pi| quantile::tau_star(config.tau, pi)).collect();
    let mut keys: Vec<i64> = stars.iter().flatten().map(|&t| grid_key(t)).collect();
    keys.push(grid_key(tau_qrii));
    keys.sort_unstable();
    keys.dedup();
    let max_key = ((1.0 / resolution).round() as i64) - 1;
    let severity = case.severity();
    let fits: BTreeMap<i64, FittedQuantile> = keys
        .par_iter()
        .map(|&k| {
            let level = (k.min(max_key) as f64 * resolution).clamp(1e-6, 1.0 - 1e-6);
            quantile::fit_quantile(&severity.0, &severity.1, level, &config.quantile).map(|f| (k, f))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();
    let qrii_fit = quantile::fit_quantile(&severity.0, &severity.1, tau_qrii, &config.quantile)?;

    let mut premiums: Vec<[f64; 6]> = Vec::with_capacity(n);
    let mut feasible = vec![true; n];
    for i in 0..n {
        let (e, row) = (pure[i], &rows[i]);
        let (qr_var, pqr_var) = match stars[i] {
            Some(t) => {
                let fit = &fits[&grid_key(t)];
                (quantile::predict_var(fit, row, fit.tau)?, quantile::predict_var(&pqr.fit, row, t)?)
            }
            None => {
                feasible[i] = false;
                (0.0, 0.0)
            }
        };
        let qrii = (1.0 - p[i]) * quantile::predict_var(&qrii_fit, row, tau_qrii)?;
        premiums.push([
            (1.0 + phi_evpp) * e,
            e + phi_sdpp * variance[i].max(0.0).sqrt(),
            e + phi_qr * (qr_var - e),
            e + phi_pqr * (pqr_var - e),
            e + phi_epp * (er.fit.predict(row)? - e),
            qrii,
        ]);
    }

    let mut kept = Vec::with_capacity(n);
    for i in 0..n {
        let ok = feasible[i] && premiums[i].iter().all(|v| *v > 0.0 && v.is_finite());
        if ok {
            kept.push(i);
        } else if !config.drop_infeasible {
            let bad = (0..n)
                .filter(|&j| !feasible[j] || premiums[j].iter().any(|v| !(*v > 0.0 && v.is_finite())))
                .count();
            return Err(RatemakingError::Infeasible(format!(
                "{bad} policies have an undefined or non-positive premium (first at row {}); pass --drop-infeasible to exclude them",
                i + 1
            )));
        }
    }
    let names = ["GLMs(EVPP)", "GLMs(SDPP)", "QR", "PQR", "ER", "QRII"];
    let models = names
        .iter()
        .enumerate()
        .map(|(m, name)| (name.to_string(), kept.iter().map(|&i| premiums[i][m]).collect()))
        .collect();
    Ok(PolicyPremiums {
        models,
        losses: kept.iter().map(|&i| case.records[i].aggregate_loss).collect(),
        dropped: n - kept.len(),
        kept,
    })
}

/// Pairwise Gini matrix of the six models over random splits, plus full-sample Lorenz curves.
pub fn cmd_gini(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let case = CaseData::load(config)?;
    let priced = policy_premiums(config, &case)?;
    let matrix: GiniMatrix = evaluation::gini_matrix(&priced.models, &priced.losses, &config.gini)?;
    let mut out = Outputs::new(&config.output_dir)?;
    out.write("gini_matrix.csv", |w| matrix.write_csv(w))?;
    out.write("lorenz_curves.csv", |w| evaluation::write_curves_csv(&priced.models, &priced.losses, w))?;
    out.json(
        "gini.json",
        &serde_json::json!({
            "matrix": matrix,
            "winner": matrix.winner_name(),
            "policies_used": priced.kept.len(),
            "policies_dropped": priced.dropped,
        }),
    )?;
    out.finish("gini", config)
}

/// Checks the coherence axioms of the sample expectile on seeded Tweedie samples.
pub fn coherence_reports(config: &RunConfig) -> Result<Vec<CoherenceReport>> {
    let c = &config.coherence;
    let law = Tweedie::new(c.mean, c.power, c.dispersion)?;
    c.taus
        .par_iter()
        .enumerate()
        .map(|(k, &tau)| {
            let mut rng = simulator::keyed_rng(config.seed, k as u64, simulator::STREAM_LOSSES);
            let sample: Vec<f64> = (0..c.sample_size).map(|_| rng.sample(law)).collect();
            principles::coherence_report(&sample, tau, c.trials, config.seed.wrapping_add(k as u64))
        })
        .collect()
}

/// Writes the coherence reports. Returns the files and whether every axiom held.
pub fn cmd_coherence(config: &RunConfig) -> Result<(Vec<PathBuf>, bool)> {
    config.validate()?;
    let reports = coherence_reports(config)?;
    let passed = reports.iter().all(CoherenceReport::passed);
    let mut out = Outputs::new(&config.output_dir)?;
    out.json("coherence.json", &reports)?;
    Ok((out.finish("coherence", config)?, passed))
}
