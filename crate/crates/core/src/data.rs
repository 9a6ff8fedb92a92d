//! Combined trial + target-population data.
//!
//! A [`CombinedSample`] holds every subject of the trial (`s = 1`) and of the
//! target population (`s = 0`) in file order. Treatment and outcome are only
//! recorded for trial subjects. Covariates are stored without an intercept
//! column; model code prepends the constant where it needs one.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Arm, Error, Result};

/// Covariate vector of one subject. Inline up to four covariates.
pub type Covariates = SmallVec<[f64; 4]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub in_trial: bool,
    /// Treatment indicator, present iff `in_trial`.
    pub treated: Option<bool>,
    /// Outcome, present iff `in_trial`.
    pub outcome: Option<f64>,
    pub covariates: Covariates,
}

impl SubjectRow {
    pub fn trial(treated: bool, outcome: f64, covariates: &[f64]) -> Self {
        SubjectRow {
            in_trial: true,
            treated: Some(treated),
            outcome: Some(outcome),
            covariates: Covariates::from_slice(covariates),
        }
    }

    pub fn population(covariates: &[f64]) -> Self {
        SubjectRow {
            in_trial: false,
            treated: None,
            outcome: None,
            covariates: Covariates::from_slice(covariates),
        }
    }

    /// Trial arm, `None` for population rows.
    #[inline]
    pub fn arm(&self) -> Option<Arm> {
        match (self.in_trial, self.treated) {
            (true, Some(true)) => Some(Arm::Treated),
            (true, Some(false)) => Some(Arm::Control),
            _ => None,
        }
    }

    fn check(&self, row: usize, p: usize) -> Result<()> {
        if self.covariates.len() != p {
            return Err(Error::CovariateLength {
                row,
                expected: p,
                found: self.covariates.len(),
            });
        }
        if self.in_trial {
            if self.treated.is_none() {
                return Err(Error::MissingTrialValue {
                    row,
                    column: "t".into(),
                });
            }
            if self.outcome.is_none() {
                return Err(Error::MissingTrialValue {
                    row,
                    column: "y".into(),
                });
            }
        } else {
            if self.outcome.is_some() {
                return Err(Error::OutcomeOnPopulationRow {
                    row,
                    column: "y".into(),
                });
            }
            if self.treated.is_some() {
                return Err(Error::OutcomeOnPopulationRow {
                    row,
                    column: "t".into(),
                });
            }
        }
        Ok(())
    }
}

/// Trial ∪ population, immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedSample {
    rows: Vec<SubjectRow>,
    covariate_names: Vec<String>,
}

impl CombinedSample {
    /// Builds a sample, checking the per-row invariants. Sample-level
    /// conditions (arm sizes, nonempty population) are reported by
    /// [`validate`] instead.
    pub fn new(rows: Vec<SubjectRow>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        for (i, row) in rows.iter().enumerate() {
            row.check(i, p)?;
        }
        Ok(CombinedSample {
            rows,
            covariate_names,
        })
    }

    /// Rows already known to satisfy the per-row invariants (resampling).
    pub(crate) fn from_checked_rows(rows: Vec<SubjectRow>, covariate_names: Vec<String>) -> Self {
        debug_assert!(rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.check(i, covariate_names.len()).is_ok()));
        CombinedSample {
            rows,
            covariate_names,
        }
    }

    pub fn rows(&self) -> &[SubjectRow] {
        &self.rows
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    /// Number of covariates (without intercept).
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_trial(&self) -> usize {
        self.rows.iter().filter(|r| r.in_trial).count()
    }

    pub fn n_population(&self) -> usize {
        self.len() - self.n_trial()
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.rows.iter().filter(|r| r.arm() == Some(arm)).count()
    }

    /// Mean covariate vector over the population rows.
    pub fn population_means(&self) -> Result<Vec<f64>> {
        let mut sums = vec![0.0; self.n_covariates()];
        let mut count = 0usize;
        for row in self.rows.iter().filter(|r| !r.in_trial) {
            count += 1;
            for (s, x) in sums.iter_mut().zip(&row.covariates) {
                *s += x;
            }
        }
        if count == 0 {
            return Err(Error::EmptyPopulation);
        }
        Ok(sums.into_iter().map(|s| s / count as f64).collect())
    }
}

/// One violated sample-level invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnostic {
    TooFewRows(usize),
    TooFewTrialRows(usize),
    EmptyTreatedArm,
    EmptyControlArm,
    EmptyPopulation,
    NonFiniteCovariate { row: usize },
    NonFiniteOutcome { row: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::TooFewRows(n) => write!(f, "combined sample has {n} rows, need at least 2"),
            Diagnostic::TooFewTrialRows(n) => write!(f, "trial has {n} rows, need at least 2"),
            Diagnostic::EmptyTreatedArm => f.write_str("empty treated arm"),
            Diagnostic::EmptyControlArm => f.write_str("empty control arm"),
            Diagnostic::EmptyPopulation => f.write_str("empty target population"),
            Diagnostic::NonFiniteCovariate { row } => write!(f, "row {row}: non-finite covariate"),
            Diagnostic::NonFiniteOutcome { row } => write!(f, "row {row}: non-finite outcome"),
        }
    }
}

/// Lists every violated sample-level invariant; empty when the sample is
/// usable for generalization.
pub fn validate(sample: &CombinedSample) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = sample.len();
    if n < 2 {
        out.push(Diagnostic::TooFewRows(n));
    }
    let n_trial = sample.n_trial();
    if n_trial < 2 {
        out.push(Diagnostic::TooFewTrialRows(n_trial));
    }
    if sample.arm_size(Arm::Treated) == 0 {
        out.push(Diagnostic::EmptyTreatedArm);
    }
    if sample.arm_size(Arm::Control) == 0 {
        out.push(Diagnostic::EmptyControlArm);
    }
    if n - n_trial == 0 {
        out.push(Diagnostic::EmptyPopulation);
    }
    for (row, r) in sample.rows().iter().enumerate() {
        if r.covariates.iter().any(|x| !x.is_finite()) {
            out.push(Diagnostic::NonFiniteCovariate { row });
        }
        if r.outcome.is_some_and(|y| !y.is_finite()) {
            out.push(Diagnostic::NonFiniteOutcome { row });
        }
    }
    out
}

/// Column names of the study indicator, treatment and outcome. Covariates
/// default to every remaining column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub study: String,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            study: "s".into(),
            treatment: "t".into(),
            outcome: "y".into(),
            covariates: None,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

fn parse_indicator(cell: &str, row: usize, column: &str) -> Result<bool> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::NonBinaryIndicator {
            row,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::MalformedNumber {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

/// Reads a combined sample. Row numbers in errors are 0-based data rows.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<CombinedSample> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<CombinedSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let s_col = find(&schema.study)?;
    let t_col = find(&schema.treatment)?;
    let y_col = find(&schema.outcome)?;
    let covariate_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![s_col, t_col, y_col].contains(i))
            .map(|(_, h)| h.trim().to_string())
            .collect(),
    };
    let x_cols = covariate_names
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let in_trial = parse_indicator(cell(s_col), row, &schema.study)?;
        let t_cell = cell(t_col);
        let y_cell = cell(y_col);
        let (treated, outcome) = if in_trial {
            if is_missing(t_cell) {
                return Err(Error::MissingTrialValue {
                    row,
                    column: schema.treatment.clone(),
                });
            }
            if is_missing(y_cell) {
                return Err(Error::MissingTrialValue {
                    row,
                    column: schema.outcome.clone(),
                });
            }
            (
                Some(parse_indicator(t_cell, row, &schema.treatment)?),
                Some(parse_number(y_cell, row, &schema.outcome)?),
            )
        } else {
            if !is_missing(y_cell) {
                return Err(Error::OutcomeOnPopulationRow {
                    row,
                    column: schema.outcome.clone(),
                });
            }
            if !is_missing(t_cell) {
                return Err(Error::OutcomeOnPopulationRow {
                    row,
                    column: schema.treatment.clone(),
                });
            }
            (None, None)
        };
        let covariates = x_cols
            .iter()
            .zip(&covariate_names)
            .map(|(&i, name)| parse_number(cell(i), row, name))
            .collect::<Result<Covariates>>()?;
        rows.push(SubjectRow {
            in_trial,
            treated,
            outcome,
            covariates,
        });
    }
    CombinedSample::new(rows, covariate_names)
}

pub fn write_csv(path: impl AsRef<Path>, sample: &CombinedSample) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(file, sample)
}

/// Writes the `s,t,y,<covariates>` layout read by [`load_csv`]. Floats use
/// the shortest representation that parses back to the same value.
pub fn write_csv_to<W: Write>(writer: W, sample: &CombinedSample) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["s".to_string(), "t".to_string(), "y".to_string()];
    header.extend(sample.covariate_names().iter().cloned());
    wtr.write_record(&header)?;
    for row in sample.rows() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(if row.in_trial { "1" } else { "0" }.to_string());
        rec.push(row.treated.map(|t| (t as u8).to_string()).unwrap_or_default());
        rec.push(row.outcome.map(|y| y.to_string()).unwrap_or_default());
        rec.extend(row.covariates.iter().map(|x| x.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
