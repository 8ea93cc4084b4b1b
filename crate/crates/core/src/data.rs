//! Policy records, categorical factor specs, dummy-coded design matrices and
//! tariff-class enumeration.

use std::collections::HashMap;
use std::io::Read;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{RatemakingError, Result};

pub const INTERCEPT: &str = "(Intercept)";

/// One insurance policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    /// Fraction of a policy year, in (0, 1].
    pub exposure: f64,
    pub claim_occurred: bool,
    pub claim_count: u32,
    pub aggregate_loss: f64,
    /// `(factor name, level label)` pairs.
    pub factors: Vec<(String, String)>,
}

impl PolicyRecord {
    pub fn level(&self, factor: &str) -> Option<&str> {
        self.factors
            .iter()
            .find(|(name, _)| name == factor)
            .map(|(_, level)| level.as_str())
    }

    /// Checks the record invariants, returning a description of the first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if !(self.exposure > 0.0 && self.exposure <= 1.0) {
            return Err(format!("exposure {} outside (0, 1]", self.exposure));
        }
        if !(self.aggregate_loss >= 0.0) || !self.aggregate_loss.is_finite() {
            return Err(format!("aggregate loss {} is not a non-negative amount", self.aggregate_loss));
        }
        if !self.claim_occurred && self.aggregate_loss != 0.0 {
            return Err("no claim implies zero loss".to_string());
        }
        Ok(())
    }
}

/// Column mapping for delimited policy files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub exposure: String,
    pub claim: String,
    /// Absent claim-count columns default to the claim indicator.
    pub claim_count: Option<String>,
    pub loss: String,
    pub factors: Vec<String>,
    pub delimiter: char,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            exposure: "exposure".into(),
            claim: "clm".into(),
            claim_count: Some("numclaims".into()),
            loss: "claimcst0".into(),
            factors: Vec::new(),
            delimiter: ',',
        }
    }
}

impl Schema {
    pub fn with_factors<I, S>(factors: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            factors: factors.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| RatemakingError::Schema(format!("missing column `{name}`")))
}

fn parse_decimal(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|e| RatemakingError::Parse {
        row,
        column: column.to_string(),
        message: format!("`{raw}`: {e}"),
    })
}

fn parse_flag(raw: &str, row: usize, column: &str) -> Result<bool> {
    match raw.trim() {
        "1" | "1.0" | "true" | "TRUE" | "yes" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" | "no" => Ok(false),
        other => Err(RatemakingError::Parse {
            row,
            column: column.to_string(),
            message: format!("`{other}` is not a claim indicator"),
        }),
    }
}

/// Reads policies from a delimited text stream with a header row.
///
/// Rows are numbered from 1 (first data row). Parse failures abort at the
/// offending row; invariant violations are collected and reported together.
pub fn load_policies<R: Read>(source: R, schema: &Schema) -> Result<Vec<PolicyRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let exposure_idx = column_index(&headers, &schema.exposure)?;
    let claim_idx = column_index(&headers, &schema.claim)?;
    let loss_idx = column_index(&headers, &schema.loss)?;
    let count_idx = schema
        .claim_count
        .as_deref()
        .map(|c| column_index(&headers, c))
        .transpose()?;
    let factor_idx = schema
        .factors
        .iter()
        .map(|f| column_index(&headers, f))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut invalid = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let exposure = parse_decimal(field(exposure_idx), row_no, &schema.exposure)?;
        let claim_occurred = parse_flag(field(claim_idx), row_no, &schema.claim)?;
        let aggregate_loss = parse_decimal(field(loss_idx), row_no, &schema.loss)?;
        let claim_count = match count_idx {
            Some(idx) => {
                let column = schema.claim_count.as_deref().unwrap_or_default();
                let v = parse_decimal(field(idx), row_no, column)?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(RatemakingError::Parse {
                        row: row_no,
                        column: column.to_string(),
                        message: format!("`{v}` is not a non-negative integer"),
                    });
                }
                v as u32
            }
            None => u32::from(claim_occurred),
        };
        let factors = schema
            .factors
            .iter()
            .zip(&factor_idx)
            .map(|(name, &idx)| (name.clone(), field(idx).to_string()))
            .collect();
        let record = PolicyRecord {
            exposure,
            claim_occurred,
            claim_count,
            aggregate_loss,
            factors,
        };
        match record.check() {
            Ok(()) => records.push(record),
            Err(reason) => invalid.push((row_no, reason)),
        }
    }
    if !invalid.is_empty() {
        return Err(RatemakingError::Validation { rows: invalid });
    }
    Ok(records)
}

/// Writes policies with the schema's column names; factor columns follow the loss column.
pub fn write_policies<W: std::io::Write>(records: &[PolicyRecord], schema: &Schema, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(schema.delimiter as u8).from_writer(out);
    let mut header = vec![schema.exposure.clone(), schema.claim.clone()];
    header.extend(schema.claim_count.clone());
    header.push(schema.loss.clone());
    header.extend(schema.factors.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.exposure.to_string(), u8::from(r.claim_occurred).to_string()];
        if schema.claim_count.is_some() {
            row.push(r.claim_count.to_string());
        }
        row.push(r.aggregate_loss.to_string());
        for f in &schema.factors {
            row.push(r.level(f).unwrap_or_default().to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A categorical rating factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
    pub reference: String,
}

impl Factor {
    pub fn new<S: Into<String>>(name: S, levels: &[&str], reference: &str) -> Self {
        Self {
            name: name.into(),
            levels: levels.iter().map(|l| l.to_string()).collect(),
            reference: reference.to_string(),
        }
    }

    /// Non-reference levels in spec order.
    pub fn coded_levels(&self) -> impl Iterator<Item = &String> {
        self.levels.iter().filter(move |l| **l != self.reference)
    }
}

/// Ordered list of factors with their reference levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub factors: Vec<Factor>,
}

impl FactorSpec {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        let spec = Self { factors };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.factors {
            if f.levels.is_empty() {
                return Err(RatemakingError::Config(format!("factor `{}` has no levels", f.name)));
            }
            let mut seen = std::collections::HashSet::new();
            for l in &f.levels {
                if !seen.insert(l) {
                    return Err(RatemakingError::Config(format!(
                        "factor `{}` repeats level `{l}`",
                        f.name
                    )));
                }
            }
            if !f.levels.contains(&f.reference) {
                return Err(RatemakingError::Config(format!(
                    "reference level `{}` is not a level of `{}`",
                    f.reference, f.name
                )));
            }
        }
        Ok(())
    }

    /// Builds a spec from the levels observed in `records`. Levels sort
    /// numerically when every label parses as a number.
    pub fn infer(records: &[PolicyRecord], references: &[(String, String)]) -> Result<Self> {
        let mut factors = Vec::new();
        for (name, reference) in references {
            let mut levels: Vec<String> = Vec::new();
            for r in records {
                let level = r.level(name).ok_or_else(|| {
                    RatemakingError::Schema(format!("records lack factor `{name}`"))
                })?;
                if !levels.iter().any(|l| l == level) {
                    levels.push(level.to_string());
                }
            }
            if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
                levels.sort_by(|a, b| {
                    a.parse::<f64>()
                        .unwrap()
                        .total_cmp(&b.parse::<f64>().unwrap())
                });
            } else {
                levels.sort();
            }
            factors.push(Factor {
                name: name.clone(),
                levels,
                reference: reference.clone(),
            });
        }
        Self::new(factors)
    }

    pub fn column_count(&self) -> usize {
        1 + self.factors.iter().map(|f| f.levels.len() - 1).sum::<usize>()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![INTERCEPT.to_string()];
        for f in &self.factors {
            names.extend(f.coded_levels().map(|l| format!("{}_{}", f.name, l)));
        }
        names
    }

    /// Dummy-coded row for one level per factor (given in spec order).
    pub fn encode_levels<S: AsRef<str>>(&self, levels: &[S]) -> Result<Vec<f64>> {
        if levels.len() != self.factors.len() {
            return Err(RatemakingError::Layout(format!(
                "expected {} levels, got {}",
                self.factors.len(),
                levels.len()
            )));
        }
        let mut row = Vec::with_capacity(self.column_count());
        row.push(1.0);
        for (f, level) in self.factors.iter().zip(levels) {
            let level = level.as_ref();
            if !f.levels.iter().any(|l| l == level) {
                return Err(RatemakingError::Encoding {
                    factor: f.name.clone(),
                    level: level.to_string(),
                    row: 0,
                });
            }
            row.extend(f.coded_levels().map(|l| if l == level { 1.0 } else { 0.0 }));
        }
        Ok(row)
    }

    /// Recovers the level of every factor from a dummy-coded row.
    pub fn decode_row(&self, row: &[f64]) -> Result<Vec<String>> {
        if row.len() != self.column_count() {
            return Err(RatemakingError::Layout(format!(
                "row has {} columns, spec expects {}",
                row.len(),
                self.column_count()
            )));
        }
        let mut offset = 1;
        let mut levels = Vec::with_capacity(self.factors.len());
        for f in &self.factors {
            let width = f.levels.len() - 1;
            let block = &row[offset..offset + width];
            let hot: Vec<usize> = (0..width).filter(|&j| block[j] == 1.0).collect();
            let level = match hot.as_slice() {
                [] => f.reference.clone(),
                [j] => f.coded_levels().nth(*j).cloned().unwrap_or_default(),
                _ => {
                    return Err(RatemakingError::Layout(format!(
                        "factor `{}` has several active indicators",
                        f.name
                    )))
                }
            };
            levels.push(level);
            offset += width;
        }
        Ok(levels)
    }
}

/// Dummy-coded covariates: intercept then one indicator per non-reference level.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub column_names: Vec<String>,
}

impl DesignMatrix {
    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Self {
        let k = column_names.len();
        let matrix = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        Self {
            matrix,
            column_names,
        }
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }

    /// Sub-design holding the selected rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(rows),
            column_names: self.column_names.clone(),
        }
    }
}

/// Dummy-encodes `records` against `spec`.
pub fn encode_design(records: &[PolicyRecord], spec: &FactorSpec) -> Result<DesignMatrix> {
    let k = spec.column_count();
    let mut matrix = DMatrix::<f64>::zeros(records.len(), k);
    let lookup: Vec<HashMap<&str, Option<usize>>> = spec
        .factors
        .iter()
        .map(|f| {
            let mut coded = 0;
            f.levels
                .iter()
                .map(|l| {
                    if *l == f.reference {
                        (l.as_str(), None)
                    } else {
                        coded += 1;
                        (l.as_str(), Some(coded - 1))
                    }
                })
                .collect()
        })
        .collect();
    for (i, record) in records.iter().enumerate() {
        matrix[(i, 0)] = 1.0;
        let mut offset = 1;
        for (f, levels) in spec.factors.iter().zip(&lookup) {
            let level = record.level(&f.name).unwrap_or("");
            match levels.get(level) {
                Some(Some(j)) => matrix[(i, offset + j)] = 1.0,
                Some(None) => {}
                None => {
                    return Err(RatemakingError::Encoding {
                        factor: f.name.clone(),
                        level: level.to_string(),
                        row: i + 1,
                    })
                }
            }
            offset += f.levels.len() - 1;
        }
    }
    Ok(DesignMatrix {
        matrix,
        column_names: spec.column_names(),
    })
}

/// A cell of the factor cross-classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffClass {
    pub levels: Vec<String>,
    pub class_label: String,
    /// Design row of a policy in this class with exposure 1.
    pub representative_row: Vec<f64>,
}

/// Cartesian product of factor levels, last factor varying fastest.
pub fn enumerate_tariff_classes(spec: &FactorSpec) -> Result<Vec<TariffClass>> {
    if spec.factors.is_empty() {
        return Err(RatemakingError::Config("factor spec is empty".into()));
    }
    let mut combos: Vec<Vec<String>> = vec![Vec::new()];
    for f in &spec.factors {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                f.levels.iter().map(move |l| {
                    let mut next = prefix.clone();
                    next.push(l.clone());
                    next
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|levels| {
            let class_label = spec
                .factors
                .iter()
                .zip(&levels)
                .map(|(f, l)| format!("{}={}", f.name, l))
                .collect::<Vec<_>>()
                .join(";");
            let representative_row = spec.encode_levels(&levels)?;
            Ok(TariffClass {
                levels,
                class_label,
                representative_row,
            })
        })
        .collect()
}

/// Index of the tariff class each record falls into.
pub fn class_index_of(records: &[PolicyRecord], spec: &FactorSpec) -> Result<Vec<usize>> {
    records
        .iter()
        .enumerate()
        .map(|(row, r)| {
            let mut idx = 0;
            for f in &spec.factors {
                let level = r.level(&f.name).unwrap_or("");
                let pos = f.levels.iter().position(|l| l == level).ok_or_else(|| {
                    RatemakingError::Encoding {
                        factor: f.name.clone(),
                        level: level.to_string(),
                        row: row + 1,
                    }
                })?;
                idx = idx * f.levels.len() + pos;
            }
            Ok(idx)
        })
        .collect()
}
