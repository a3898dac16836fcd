//! Cohort representation and the CSV interchange schema.
//!
//! The canonical file layout is `id,treatment,x1..xP[,y]` with a mandatory
//! header row. Treatment labels may be arbitrary strings; they are remapped to
//! contiguous group indices in sorted order (numeric order when every label
//! parses as a number, lexicographic otherwise).

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Observed data for `n` units: covariates, treatment received and optional outcomes.
///
/// Groups are addressed by a zero-based index `w` in `0..z()`; `label(w)` gives the
/// label the group carried in the source data. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    unit_ids: Vec<String>,
    covariate_names: Vec<String>,
    covariates: DMatrix<f64>,
    treatments: Vec<usize>,
    labels: Vec<String>,
    outcomes: Option<Vec<f64>>,
}

impl Cohort {
    /// Builds a cohort from already-indexed treatments.
    pub fn new(
        unit_ids: Vec<String>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
        treatments: Vec<usize>,
        labels: Vec<String>,
        outcomes: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        if covariates.nrows() != n || treatments.len() != n {
            return Err(Error::Dimension(format!(
                "{} ids, {} covariate rows, {} treatments",
                n,
                covariates.nrows(),
                treatments.len()
            )));
        }
        if covariates.ncols() == 0 {
            return Err(Error::InvalidCohort(
                "at least one covariate is required".into(),
            ));
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                covariates.ncols()
            )));
        }
        if let Some(y) = &outcomes {
            if y.len() != n {
                return Err(Error::Dimension(format!(
                    "{} outcomes for {} units",
                    y.len(),
                    n
                )));
            }
            if let Some(row) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidCohort(format!(
                    "missing outcome value at row {}",
                    row + 1
                )));
            }
        }
        if let Some(idx) = covariates.iter().position(|v| !v.is_finite()) {
            // column-major storage
            return Err(Error::MissingCovariate {
                row: idx % n.max(1) + 1,
            });
        }
        let z = labels.len();
        if z < 2 {
            return Err(Error::InvalidCohort(format!(
                "need at least 2 treatment groups, found {z}"
            )));
        }
        let mut sizes = vec![0usize; z];
        for &w in &treatments {
            if w >= z {
                return Err(Error::InvalidCohort(format!(
                    "treatment index {w} outside 0..{z}"
                )));
            }
            sizes[w] += 1;
        }
        for (w, &size) in sizes.iter().enumerate() {
            if size < 2 {
                return Err(Error::GroupTooSmall {
                    label: labels[w].clone(),
                    size,
                });
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &unit_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            unit_ids,
            covariate_names,
            covariates,
            treatments,
            labels,
            outcomes,
        })
    }

    /// Builds a cohort from raw treatment labels, remapping them to `0..Z`.
    pub fn from_labels(
        unit_ids: Vec<String>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
        raw_labels: &[String],
        outcomes: Option<Vec<f64>>,
    ) -> Result<Self> {
        let labels = sorted_labels(raw_labels);
        let treatments = raw_labels
            .iter()
            .map(|l| {
                labels
                    .iter()
                    .position(|x| x == l)
                    .expect("label collected above")
            })
            .collect();
        Self::new(
            unit_ids,
            covariate_names,
            covariates,
            treatments,
            labels,
            outcomes,
        )
    }

    pub fn n(&self) -> usize {
        self.unit_ids.len()
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    /// Number of treatment groups.
    pub fn z(&self) -> usize {
        self.labels.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn treatments(&self) -> &[usize] {
        &self.treatments
    }

    pub fn treatment(&self, unit: usize) -> usize {
        self.treatments[unit]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, group: usize) -> &str {
        &self.labels[group]
    }

    /// Group index for an original label.
    pub fn group_of_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn outcomes(&self) -> Option<&[f64]> {
        self.outcomes.as_deref()
    }

    /// Per-group sizes `n_w`.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.z()];
        for &w in &self.treatments {
            sizes[w] += 1;
        }
        sizes
    }

    /// Unit indices receiving treatment `group`, ascending.
    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.treatments[i] == group)
            .collect()
    }

    /// Indicator view `T_iw`.
    pub fn indicator(&self, unit: usize, group: usize) -> bool {
        self.treatments[unit] == group
    }

    /// Group with the most units; ties go to the lowest index.
    pub fn largest_group(&self) -> usize {
        let sizes = self.group_sizes();
        let max = *sizes.iter().max().expect("z >= 2");
        sizes.iter().position(|&s| s == max).expect("max exists")
    }

    /// Keeps the listed rows (in the given order). Group labels are preserved even
    /// when a group shrinks; a group falling below two units is an error.
    pub fn subset(&self, rows: &[usize]) -> Result<Cohort> {
        let covariates = self.covariates.select_rows(rows.iter());
        Cohort::new(
            rows.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            self.covariate_names.clone(),
            covariates,
            rows.iter().map(|&i| self.treatments[i]).collect(),
            self.labels.clone(),
            self.outcomes
                .as_ref()
                .map(|y| rows.iter().map(|&i| y[i]).collect()),
        )
    }

    /// Same units with every covariate column replaced.
    pub fn with_covariates(&self, covariates: DMatrix<f64>) -> Result<Cohort> {
        Cohort::new(
            self.unit_ids.clone(),
            self.covariate_names.clone(),
            covariates,
            self.treatments.clone(),
            self.labels.clone(),
            self.outcomes.clone(),
        )
    }

    pub fn with_outcomes(mut self, outcomes: Vec<f64>) -> Result<Cohort> {
        if outcomes.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} outcomes for {} units",
                outcomes.len(),
                self.n()
            )));
        }
        self.outcomes = Some(outcomes);
        Ok(self)
    }
}

fn sorted_labels(raw: &[String]) -> Vec<String> {
    let mut labels: Vec<String> = raw.to_vec();
    labels.sort();
    labels.dedup();
    let numeric: Option<Vec<f64>> = labels
        .iter()
        .map(|l| l.trim().parse::<f64>().ok())
        .collect();
    if let Some(values) = numeric {
        let mut pairs: Vec<(f64, String)> = values.into_iter().zip(labels).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().map(|(_, l)| l).collect()
    } else {
        labels
    }
}

/// Which CSV columns hold which fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMapping {
    /// Unit identifier column; when absent ids are the 1-based row numbers.
    pub id: Option<String>,
    pub treatment: String,
    /// Covariate columns; `None` takes every column not otherwise claimed.
    pub covariates: Option<Vec<String>>,
    pub outcome: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            id: Some("id".into()),
            treatment: "treatment".into(),
            covariates: None,
            outcome: None,
        }
    }
}

impl ColumnMapping {
    /// The canonical mapping for a header: `id` and `y` are used when present.
    pub fn infer(header: &[String]) -> Self {
        let has = |name: &str| header.iter().any(|h| h == name);
        Self {
            id: has("id").then(|| "id".to_string()),
            treatment: "treatment".into(),
            covariates: None,
            outcome: has("y").then(|| "y".to_string()),
        }
    }
}

fn column_index(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

/// Reads a cohort from CSV.
pub fn load_cohort(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Cohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(file, mapping)
}

/// Reads a cohort from CSV with the header-inferred canonical mapping.
pub fn load_cohort_canonical(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mapping = ColumnMapping::infer(&header);
    read_records(reader, header, &mapping)
}

pub fn read_cohort<R: Read>(input: R, mapping: &ColumnMapping) -> Result<Cohort> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    read_records(reader, header, mapping)
}

fn read_records<R: Read>(
    mut reader: csv::Reader<R>,
    header: Vec<String>,
    mapping: &ColumnMapping,
) -> Result<Cohort> {
    let id_col = mapping
        .id
        .as_deref()
        .map(|c| column_index(&header, c))
        .transpose()?;
    let treat_col = column_index(&header, &mapping.treatment)?;
    let outcome_col = mapping
        .outcome
        .as_deref()
        .map(|c| column_index(&header, c))
        .transpose()?;
    let cov_cols: Vec<usize> = match &mapping.covariates {
        Some(names) => names
            .iter()
            .map(|c| column_index(&header, c))
            .collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|&j| Some(j) != id_col && j != treat_col && Some(j) != outcome_col)
            .collect(),
    };
    if cov_cols.is_empty() {
        return Err(Error::InvalidCohort("no covariate columns".into()));
    }

    let mut ids = Vec::new();
    let mut raw_labels = Vec::new();
    let mut values = Vec::new();
    let mut outcomes = outcome_col.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |j: usize| record.get(j).unwrap_or("");
        ids.push(match id_col {
            Some(j) => cell(j).trim().to_string(),
            None => row.to_string(),
        });
        let label = cell(treat_col).trim();
        if label.is_empty() {
            return Err(Error::InvalidCohort(format!(
                "missing treatment value at row {row}"
            )));
        }
        raw_labels.push(label.to_string());
        for &j in &cov_cols {
            let text = cell(j);
            if is_missing(text) {
                return Err(Error::MissingCovariate { row });
            }
            let v: f64 = text.trim().parse().map_err(|_| Error::NonNumeric {
                row,
                column: header[j].clone(),
                value: text.to_string(),
            })?;
            values.push(v);
        }
        if let (Some(j), Some(y)) = (outcome_col, outcomes.as_mut()) {
            let text = cell(j);
            if is_missing(text) {
                return Err(Error::InvalidCohort(format!(
                    "missing outcome value at row {row}"
                )));
            }
            y.push(text.trim().parse().map_err(|_| Error::NonNumeric {
                row,
                column: header[j].clone(),
                value: text.to_string(),
            })?);
        }
    }
    let n = ids.len();
    let covariates = DMatrix::from_row_slice(n, cov_cols.len(), &values);
    let names = cov_cols.iter().map(|&j| header[j].clone()).collect();
    Cohort::from_labels(ids, names, covariates, &raw_labels, outcomes)
}

/// Writes the cohort in the canonical schema. Numbers use the shortest
/// representation that parses back to the same `f64`.
pub fn write_cohort<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "treatment".to_string()];
    header.extend(cohort.covariate_names().iter().cloned());
    if cohort.outcomes().is_some() {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for i in 0..cohort.n() {
        let mut rec = vec![
            cohort.unit_ids()[i].clone(),
            cohort.label(cohort.treatment(i)).to_string(),
        ];
        rec.extend(cohort.covariates().row(i).iter().map(|v| v.to_string()));
        if let Some(y) = cohort.outcomes() {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<cohort output>", e))?;
    Ok(())
}

pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cohort(cohort, file)
}

/// One row of the per-group summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Per-group sizes, covariate means and sample standard deviations.
pub fn summarize_cohort(cohort: &Cohort) -> Vec<GroupSummary> {
    (0..cohort.z())
        .map(|w| {
            let members = cohort.members(w);
            let n = members.len();
            let (means, sds) = (0..cohort.p())
                .map(|p| {
                    let col: Vec<f64> = members
                        .iter()
                        .map(|&i| cohort.covariates()[(i, p)])
                        .collect();
                    (mean(&col), sample_sd(&col))
                })
                .unzip();
            GroupSummary {
                label: cohort.label(w).to_string(),
                n,
                means,
                sds,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(cohort: &Cohort, rows: &[GroupSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["group".to_string(), "n".to_string()];
    for name in cohort.covariate_names() {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_sd"));
    }
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.label.clone(), row.n.to_string()];
        for (m, s) in row.means.iter().zip(&row.sds) {
            rec.push(m.to_string());
            rec.push(s.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<summary output>", e))?;
    Ok(())
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with denominator `n - 1`.
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}
