//! Ordered Lorenz curves, Gini indices over random splits, mini-max model
//! selection, and per-class bias/MSE tables.

use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RatemakingError, Result};
use crate::simulator::keyed_rng;

/// Points from `(0, 0)` to `(1, 1)`: cumulative base-premium share against cumulative loss share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzCurve {
    pub points: Vec<(f64, f64)>,
}

/// Orders policies by `competing / base` and accumulates shares.
///
/// Policies with exactly equal relative premium form one segment, so the
/// curve does not depend on input order.
pub fn ordered_lorenz(losses: &[f64], base: &[f64], competing: &[f64]) -> Result<LorenzCurve> {
    let n = losses.len();
    if base.len() != n || competing.len() != n {
        return Err(RatemakingError::Layout("losses and premiums differ in length".into()));
    }
    if n < 2 {
        return Err(RatemakingError::Domain("an ordered Lorenz curve needs at least two policies".into()));
    }
    let offenders: Vec<usize> = (0..n).filter(|&i| !(base[i] > 0.0 && base[i].is_finite())).collect();
    if !offenders.is_empty() {
        let shown: Vec<String> = offenders.iter().take(10).map(|i| (i + 1).to_string()).collect();
        return Err(RatemakingError::Domain(format!(
            "{} non-positive base premiums (rows {}{})",
            offenders.len(),
            shown.join(", "),
            if offenders.len() > 10 { ", …" } else { "" }
        )));
    }
    if let Some(i) = (0..n).find(|&i| !competing[i].is_finite() || !losses[i].is_finite()) {
        return Err(RatemakingError::Domain(format!("non-finite premium or loss at row {}", i + 1)));
    }
    let total_base: f64 = base.iter().sum();
    let total_loss: f64 = losses.iter().sum();
    if total_loss <= 0.0 {
        return Err(RatemakingError::Degenerate("losses sum to zero".into()));
    }
    let relative: Vec<f64> = competing.iter().zip(base).map(|(c, b)| c / b).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| relative[a].total_cmp(&relative[b]));
    let mut points = Vec::with_capacity(n + 1);
    points.push((0.0, 0.0));
    let (mut cum_base, mut cum_loss) = (0.0, 0.0);
    for (pos, &i) in order.iter().enumerate() {
        cum_base += base[i];
        cum_loss += losses[i];
        let last_of_group = order.get(pos + 1).is_none_or(|&j| relative[j] != relative[i]);
        if last_of_group {
            points.push((cum_base / total_base, cum_loss / total_loss));
        }
    }
    if let Some(end) = points.last_mut() {
        *end = (1.0, 1.0);
    }
    Ok(LorenzCurve { points })
}

/// `100 × 2 × (½ − area under the curve)`; positive when the curve sags below the diagonal.
pub fn gini_index(curve: &LorenzCurve) -> f64 {
    let area: f64 = curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    100.0 * 2.0 * (0.5 - area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationSet {
    /// Policies left out of each random sample.
    HeldOut,
    /// The random sample itself.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GiniOptions {
    pub n_splits: usize,
    /// Share of policies drawn without replacement in each split.
    pub split_fraction: f64,
    pub seed: u64,
    pub evaluate_on: EvaluationSet,
    pub max_resamples: usize,
}

impl Default for GiniOptions {
    fn default() -> Self {
        Self {
            n_splits: 20,
            split_fraction: 0.5,
            seed: 2021,
            evaluate_on: EvaluationSet::HeldOut,
            max_resamples: 10,
        }
    }
}

/// Pairwise Gini indices: row is the base premium, column the competing one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniMatrix {
    pub models: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    /// Largest mean Gini in each base row, the diagonal zero included.
    pub row_max: Vec<f64>,
    pub winner: usize,
    /// Another base shares the winner's row maximum.
    pub tie: bool,
    pub splits: usize,
    pub resamples: usize,
}

impl GiniMatrix {
    pub fn winner_name(&self) -> &str {
        &self.models[self.winner]
    }

    /// `base, <competing…>, max` with `mean (se)` cells to two decimals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["base".to_string()];
        header.extend(self.models.iter().cloned());
        header.push("max".into());
        w.write_record(&header)?;
        for (b, name) in self.models.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend((0..self.models.len()).map(|c| format!("{:.2} ({:.2})", self.mean[b][c], self.se[b][c])));
            rec.push(format!("{:.2}", self.row_max[b]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn pairwise(models: &[(String, Vec<f64>)], losses: &[f64], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    let sub_losses: Vec<f64> = rows.iter().map(|&i| losses[i]).collect();
    let subs: Vec<Vec<f64>> = models.iter().map(|(_, p)| rows.iter().map(|&i| p[i]).collect()).collect();
    let m = models.len();
    let mut g = vec![vec![0.0; m]; m];
    for b in 0..m {
        for c in 0..m {
            if b != c {
                g[b][c] = gini_index(&ordered_lorenz(&sub_losses, &subs[b], &subs[c])?);
            }
        }
    }
    Ok(g)
}

/// Averages pairwise Gini indices over random splits and picks the mini-max base.
pub fn gini_matrix(models: &[(String, Vec<f64>)], losses: &[f64], options: &GiniOptions) -> Result<GiniMatrix> {
    let n = losses.len();
    let m = models.len();
    if m < 2 {
        return Err(RatemakingError::Domain("a Gini matrix needs at least two models".into()));
    }
    if let Some((name, _)) = models.iter().find(|(_, p)| p.len() != n) {
        return Err(RatemakingError::Layout(format!("model {name} has a different number of policies")));
    }
    if let Some((name, p)) = models.iter().find(|(_, p)| p.iter().any(|v| !(*v > 0.0))) {
        let count = p.iter().filter(|v| !(**v > 0.0)).count();
        return Err(RatemakingError::Domain(format!(
            "model {name} has {count} non-positive premiums; filter them before comparing"
        )));
    }
    if options.n_splits == 0 || !(options.split_fraction > 0.0 && options.split_fraction < 1.0) {
        return Err(RatemakingError::Config(format!(
            "need at least one split and a fraction in (0, 1), got {} and {}",
            options.n_splits, options.split_fraction
        )));
    }
    let drawn = ((n as f64) * options.split_fraction).round() as usize;
    let part_size = match options.evaluate_on {
        EvaluationSet::HeldOut => n - drawn,
        EvaluationSet::Sample => drawn,
    };
    if part_size < 2 {
        return Err(RatemakingError::Config(format!("{n} policies leave fewer than two per split")));
    }

    let per_split: Vec<Result<(Vec<Vec<f64>>, usize)>> = (0..options.n_splits)
        .into_par_iter()
        .map(|split| {
            for attempt in 0..=options.max_resamples {
                let mut rng = keyed_rng(options.seed, split as u64, attempt as u64);
                let mut in_sample = vec![false; n];
                for i in sample(&mut rng, n, drawn) {
                    in_sample[i] = true;
                }
                let rows: Vec<usize> = (0..n)
                    .filter(|&i| in_sample[i] == (options.evaluate_on == EvaluationSet::Sample))
                    .collect();
                if rows.iter().all(|&i| losses[i] == 0.0) {
                    continue;
                }
                return Ok((pairwise(models, losses, &rows)?, attempt));
            }
            Err(RatemakingError::Degenerate(format!(
                "split {split} had zero losses after {} resamples",
                options.max_resamples
            )))
        })
        .collect();
    let mut splits = Vec::with_capacity(options.n_splits);
    let mut resamples = 0;
    for r in per_split {
        let (g, attempts) = r?;
        splits.push(g);
        resamples += attempts;
    }

    let s = splits.len() as f64;
    let mut mean = vec![vec![0.0; m]; m];
    let mut se = vec![vec![0.0; m]; m];
    for b in 0..m {
        for c in 0..m {
            if b == c {
                continue;
            }
            let vals: Vec<f64> = splits.iter().map(|g| g[b][c]).collect();
            let mu = vals.iter().sum::<f64>() / s;
            mean[b][c] = mu;
            se[b][c] = if splits.len() > 1 {
                (vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (s - 1.0)).sqrt() / s.sqrt()
            } else {
                0.0
            };
        }
    }
    let row_max: Vec<f64> = mean.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
    let best = row_max.iter().copied().fold(f64::INFINITY, f64::min);
    let winner = row_max.iter().position(|v| *v == best).expect("non-empty");
    let tie = row_max.iter().filter(|v| (**v - best).abs() <= 1e-12).count() > 1;
    Ok(GiniMatrix {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        mean,
        se,
        row_max,
        winner,
        tie,
        splits: splits.len(),
        resamples,
    })
}

/// `base, competing, x, y` for every pair of models on the full data.
pub fn write_curves_csv<W: Write>(models: &[(String, Vec<f64>)], losses: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["base", "competing", "x", "y"])?;
    for (b, base) in models {
        for (c, competing) in models {
            if b == c {
                continue;
            }
            for (x, y) in ordered_lorenz(losses, base, competing)?.points {
                w.write_record([b.clone(), c.clone(), x.to_string(), y.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    /// Mean of `truth − prediction`.
    pub bias: f64,
    pub mse: f64,
    /// `MSE − Bias²`.
    pub variance: f64,
}

/// Per-class metrics from errors laid out `[replicate][class]`.
pub fn error_metrics(errors: &[Vec<f64>]) -> Result<Vec<ClassMetric>> {
    let Some(first) = errors.first() else {
        return Err(RatemakingError::Domain("no replicates".into()));
    };
    let s = first.len();
    if errors.iter().any(|e| e.len() != s) {
        return Err(RatemakingError::Layout("replicates list different numbers of classes".into()));
    }
    let t = errors.len() as f64;
    Ok((0..s)
        .map(|c| {
            let bias = errors.iter().map(|e| e[c]).sum::<f64>() / t;
            let mse = errors.iter().map(|e| e[c] * e[c]).sum::<f64>() / t;
            ClassMetric {
                bias,
                mse,
                variance: mse - bias * bias,
            }
        })
        .collect())
}

/// Per-class bias, MSE and variance of predicted premiums; both inputs are `[replicate][class]`.
pub fn class_metrics(truth: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<Vec<ClassMetric>> {
    if truth.len() != predicted.len() || truth.iter().zip(predicted).any(|(a, b)| a.len() != b.len()) {
        return Err(RatemakingError::Layout("true and predicted premiums are not aligned".into()));
    }
    let errors: Vec<Vec<f64>> = truth
        .iter()
        .zip(predicted)
        .map(|(z, h)| z.iter().zip(h).map(|(a, b)| a - b).collect())
        .collect();
    error_metrics(&errors)
}
