//! Rectangular data with a per-cell observedness mask.
//!
//! Values are stored as `f64` regardless of kind (binary 0/1, categorical
//! level codes 0..=S). The mask is kept separately from the values: a
//! missing cell holds a NaN placeholder that nothing downstream is allowed
//! to read. Imputation never mutates a `Dataset`; the engine works on a
//! private copy of the value columns and only writes cells whose mask says
//! missing.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
    /// Levels are coded 0..=max_level; level 0 is the reference.
    Categorical {
        max_level: usize,
    },
}

impl VarKind {
    pub fn n_levels(&self) -> usize {
        match self {
            VarKind::Continuous => 0,
            VarKind::Binary => 2,
            VarKind::Categorical { max_level } => max_level + 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Plain chained equations: target regressed on the other variables.
    Srmi,
    /// Adds the other variables' missingness indicators as covariates.
    SrmiMi,
    /// SrmiMi plus indicator-by-covariate interaction terms.
    SrmiInteractionsR,
    /// SrmiMi plus covariate-by-covariate interaction terms.
    SrmiInteractionsX,
    /// Missingness indicators plus natural cubic splines of the
    /// continuous covariates.
    SrmiTricube,
    /// Fixed offset built from fitted missingness models.
    SrmiOffset,
    /// Draws from the target conditional made exact by the missingness
    /// likelihood: enumeration for discrete targets, rejection sampling
    /// for continuous ones.
    SrmiExact,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Srmi,
        StrategyKind::SrmiMi,
        StrategyKind::SrmiInteractionsR,
        StrategyKind::SrmiInteractionsX,
        StrategyKind::SrmiTricube,
        StrategyKind::SrmiOffset,
        StrategyKind::SrmiExact,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Srmi => "srmi",
            StrategyKind::SrmiMi => "srmi-mi",
            StrategyKind::SrmiInteractionsR => "srmi-interactions-r",
            StrategyKind::SrmiInteractionsX => "srmi-interactions-x",
            StrategyKind::SrmiTricube => "srmi-tricube",
            StrategyKind::SrmiOffset => "srmi-offset",
            StrategyKind::SrmiExact => "srmi-exact",
        }
    }

    pub fn parse(s: &str) -> Result<StrategyKind> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}'; expected one of: {}",
                    Self::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }

    /// Whether the imputer needs fitted missingness models for the other
    /// incomplete variables.
    pub fn needs_missingness_models(&self) -> bool {
        matches!(self, StrategyKind::SrmiOffset | StrategyKind::SrmiExact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationStrategy {
    pub kind: StrategyKind,
    /// Continuous targets only: estimate the residual variance separately
    /// per observed missingness pattern of the incomplete covariates.
    pub variance_by_r_pattern: bool,
    /// SrmiOffset only: enter the offset as a free covariate instead of a
    /// coefficient-1 term.
    pub offset_as_covariate: bool,
    /// Continuous targets only: impute on a rank-based normal-scores scale
    /// and invert afterwards.
    pub normal_scores: bool,
}

impl ImputationStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        ImputationStrategy {
            kind,
            variance_by_r_pattern: false,
            offset_as_covariate: false,
            normal_scores: false,
        }
    }
}

impl From<StrategyKind> for ImputationStrategy {
    fn from(kind: StrategyKind) -> Self {
        ImputationStrategy::new(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub kind: VarKind,
    pub strategy: ImputationStrategy,
    /// Sensitivity offset delta linking a variable's own missingness to its
    /// value; applied on the linear-predictor scale, 0 by default.
    pub sensitivity_delta: f64,
}

impl VariableSpec {
    pub fn new(kind: VarKind, strategy: impl Into<ImputationStrategy>) -> Self {
        VariableSpec {
            kind,
            strategy: strategy.into(),
            sensitivity_delta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let VarKind::Categorical { max_level } = self.kind {
            if max_level < 2 {
                return Err(Error::Config(format!(
                    "categorical variables need max level >= 2, got {max_level} \
                     (use kind 'binary' for two levels)"
                )));
            }
        }
        if !self.sensitivity_delta.is_finite() {
            return Err(Error::Config("sensitivity delta must be finite".into()));
        }
        if self.strategy.variance_by_r_pattern && self.kind != VarKind::Continuous {
            return Err(Error::Config(
                "variance_by_r_pattern is only valid for continuous variables".into(),
            ));
        }
        if self.strategy.normal_scores && self.kind != VarKind::Continuous {
            return Err(Error::Config(
                "normal_scores is only valid for continuous variables".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub spec: VariableSpec,
    /// Cell values; missing cells hold NaN and must not be read.
    pub values: Vec<f64>,
    /// Observedness mask: true = observed.
    pub observed: Vec<bool>,
}

impl Column {
    pub fn n_missing(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }

    pub fn observed_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.observed)
            .filter_map(|(&v, &o)| o.then_some(v))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    n_rows: usize,
    columns: Vec<Column>,
}

impl Dataset {
    /// Build from columns, enforcing the structural invariants: equal
    /// lengths, value domains on observed cells, and at least one observed
    /// cell per row.
    pub fn new(columns: Vec<Column>) -> Result<Dataset> {
        let n_rows = columns.first().map(|c| c.values.len()).unwrap_or(0);
        for col in &columns {
            col.spec.validate()?;
            if col.values.len() != n_rows || col.observed.len() != n_rows {
                return Err(Error::Config(format!(
                    "column {} has inconsistent length",
                    col.name
                )));
            }
            for (row, (&v, &obs)) in col.values.iter().zip(&col.observed).enumerate() {
                if obs {
                    check_domain(v, col.spec.kind, row, &col.name)?;
                }
            }
        }
        for row in 0..n_rows {
            if columns.iter().all(|c| !c.observed[row]) {
                return Err(Error::EmptyRow { row: row + 1 });
            }
        }
        Ok(Dataset { n_rows, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn column_by_name(&self, name: &str) -> Option<(usize, &Column)> {
        self.columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.name == name)
    }

    pub fn name(&self, j: usize) -> &str {
        &self.columns[j].name
    }

    pub fn kind(&self, j: usize) -> VarKind {
        self.columns[j].spec.kind
    }

    pub fn observed(&self, j: usize) -> &[bool] {
        &self.columns[j].observed
    }

    pub fn is_complete(&self, j: usize) -> bool {
        self.columns[j].observed.iter().all(|&o| o)
    }

    /// Indices of variables with at least one missing cell.
    pub fn incomplete_vars(&self) -> Vec<usize> {
        (0..self.n_vars())
            .filter(|&j| !self.is_complete(j))
            .collect()
    }

    pub fn total_missing(&self) -> usize {
        self.columns.iter().map(|c| c.n_missing()).sum()
    }

    /// Copy of the value columns, for engine working state.
    pub fn value_columns(&self) -> Vec<Vec<f64>> {
        self.columns.iter().map(|c| c.values.clone()).collect()
    }

    /// A completed dataset: observed cells taken verbatim from `self`,
    /// missing cells from `filled`. The result has an all-true mask.
    pub fn completed_with(&self, filled: &[Vec<f64>]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, col)| {
                let values = col
                    .values
                    .iter()
                    .zip(&col.observed)
                    .enumerate()
                    .map(|(i, (&v, &obs))| if obs { v } else { filled[j][i] })
                    .collect();
                Column {
                    name: col.name.clone(),
                    spec: col.spec,
                    values,
                    observed: vec![true; self.n_rows],
                }
            })
            .collect();
        Dataset {
            n_rows: self.n_rows,
            columns,
        }
    }

    pub fn load_csv_path(
        path: impl AsRef<Path>,
        specs: &HashMap<String, VariableSpec>,
    ) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::load_csv(file, specs)
    }

    /// Parse CSV with a header row; empty fields and "NA" denote missing.
    pub fn load_csv<R: Read>(
        reader: R,
        specs: &HashMap<String, VariableSpec>,
    ) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_string()).collect();
        for (i, h) in headers.iter().enumerate() {
            if headers[i + 1..].contains(h) {
                return Err(Error::Config(format!("duplicate column '{h}' in header")));
            }
        }
        let mut columns: Vec<Column> = headers
            .iter()
            .map(|name| {
                let spec = specs.get(name).copied().ok_or_else(|| {
                    Error::Config(format!("no variable spec for column '{name}'"))
                })?;
                spec.validate()?;
                Ok(Column {
                    name: name.clone(),
                    spec,
                    values: Vec::new(),
                    observed: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;

        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            let row = row_idx + 1;
            if record.len() != columns.len() {
                return Err(Error::Parse {
                    row,
                    col: "-".into(),
                    message: format!(
                        "expected {} fields, found {}",
                        columns.len(),
                        record.len()
                    ),
                });
            }
            for (j, field) in record.iter().enumerate() {
                let col = &mut columns[j];
                if field.is_empty() || field == "NA" {
                    col.values.push(f64::NAN);
                    col.observed.push(false);
                } else {
                    let v: f64 = field.parse().map_err(|_| Error::Parse {
                        row,
                        col: col.name.clone(),
                        message: format!("'{field}' is not numeric"),
                    })?;
                    check_domain(v, col.spec.kind, row_idx, &col.name)?;
                    col.values.push(v);
                    col.observed.push(true);
                }
            }
        }
        Dataset::new(columns)
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    /// Write CSV with "NA" for missing cells. Observed values use the
    /// shortest decimal representation that parses back to the same f64,
    /// so a write/load round trip is bit-exact.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        let mut record = Vec::with_capacity(self.n_vars());
        for i in 0..self.n_rows {
            record.clear();
            for col in &self.columns {
                if col.observed[i] {
                    record.push(format!("{}", col.values[i]));
                } else {
                    record.push("NA".to_string());
                }
            }
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_domain(v: f64, kind: VarKind, row_idx: usize, name: &str) -> Result<()> {
    let bad = |message: String| Error::Parse {
        row: row_idx + 1,
        col: name.to_string(),
        message,
    };
    if !v.is_finite() {
        return Err(bad(format!("non-finite value {v}")));
    }
    match kind {
        VarKind::Continuous => {}
        VarKind::Binary => {
            if v != 0.0 && v != 1.0 {
                return Err(bad(format!("binary value must be 0 or 1, got {v}")));
            }
        }
        VarKind::Categorical { max_level } => {
            if v.fract() != 0.0 || v < 0.0 || v > max_level as f64 {
                return Err(bad(format!(
                    "categorical value must be an integer in 0..={max_level}, got {v}"
                )));
            }
        }
    }
    Ok(())
}

/// Read-only view of a dataset together with current fully-populated value
/// columns. The mask and specs come from the dataset; the values come from
/// the engine's working copy (or the dataset itself when complete).
#[derive(Clone, Copy)]
pub struct CompletedView<'a> {
    pub dataset: &'a Dataset,
    pub values: &'a [Vec<f64>],
}

impl<'a> CompletedView<'a> {
    pub fn new(dataset: &'a Dataset, values: &'a [Vec<f64>]) -> Self {
        CompletedView { dataset, values }
    }

    pub fn n_rows(&self) -> usize {
        self.dataset.n_rows()
    }

    pub fn n_vars(&self) -> usize {
        self.dataset.n_vars()
    }

    pub fn value(&self, var: usize, row: usize) -> f64 {
        self.values[var][row]
    }

    pub fn column_values(&self, var: usize) -> &[f64] {
        &self.values[var]
    }

    /// Missingness indicator R_var for a row: 1.0 observed, 0.0 missing.
    pub fn indicator(&self, var: usize, row: usize) -> f64 {
        if self.dataset.observed(var)[row] {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cont(strategy: StrategyKind) -> VariableSpec {
        VariableSpec::new(VarKind::Continuous, strategy)
    }

    fn specs3() -> HashMap<String, VariableSpec> {
        let mut m = HashMap::new();
        m.insert("a".into(), cont(StrategyKind::Srmi));
        m.insert("b".into(), VariableSpec::new(VarKind::Binary, StrategyKind::Srmi));
        m
    }

    #[test]
    fn load_counts_missing_cells() {
        let csv = "a,b\n1.5,0\nNA,1\n2.5,0\n";
        let ds = Dataset::load_csv(csv.as_bytes(), &specs3()).unwrap();
        assert_eq!(ds.n_rows(), 3);
        let zeros: usize = ds
            .columns()
            .iter()
            .map(|c| c.n_missing())
            .sum();
        assert_eq!(zeros, 1);
        assert!(!ds.observed(0)[1]);
    }

    #[test]
    fn fully_missing_row_is_rejected_with_row_number() {
        let csv = "a,b\n1.0,1\nNA,\n2.0,0\n";
        let err = Dataset::load_csv(csv.as_bytes(), &specs3()).unwrap_err();
        match err {
            Error::EmptyRow { row } => assert_eq!(row, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn binary_domain_is_checked() {
        let csv = "a,b\n1.0,2\n";
        let err = Dataset::load_csv(csv.as_bytes(), &specs3()).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!(row, 1);
                assert_eq!(col, "b");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_names_row_and_col() {
        let csv = "a,b\nx,0\n";
        let err = Dataset::load_csv(csv.as_bytes(), &specs3()).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!(row, 1);
                assert_eq!(col, "a");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_header_is_rejected() {
        let csv = "a,a\n1.0,2.0\n";
        let mut specs = HashMap::new();
        specs.insert("a".to_string(), cont(StrategyKind::Srmi));
        let err = Dataset::load_csv(csv.as_bytes(), &specs).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn categorical_needs_three_levels() {
        let spec = VariableSpec::new(
            VarKind::Categorical { max_level: 1 },
            StrategyKind::Srmi,
        );
        assert!(spec.validate().is_err());
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let csv = "a,b\n0.1,1\nNA,0\n-3.25e-7,NA\n";
        let ds = Dataset::load_csv(csv.as_bytes(), &specs3()).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let ds2 = Dataset::load_csv(buf.as_slice(), &specs3()).unwrap();
        for j in 0..ds.n_vars() {
            assert_eq!(ds.observed(j), ds2.observed(j));
            for i in 0..ds.n_rows() {
                if ds.observed(j)[i] {
                    assert_eq!(
                        ds.column(j).values[i].to_bits(),
                        ds2.column(j).values[i].to_bits()
                    );
                }
            }
        }
    }
}
