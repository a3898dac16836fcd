//! Pairwise distances between a reference set and a candidate set.
//!
//! Mahalanobis distances go through a pseudo-inverse of the sample covariance:
//! eigenvalues below `1e-10 * λ_max` are discarded, so near-degenerate inputs such
//! as logit-GPS columns still produce finite distances.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor for the covariance pseudo-inverse.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Absolute difference on a single (logit-GPS) column.
    LinearGps,
    Euclidean,
    Mahalanobis,
}

/// A metric and the feature columns it is applied to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceSpec {
    metric: Metric,
    columns: Vec<usize>,
}

impl DistanceSpec {
    pub fn new(metric: Metric, columns: Vec<usize>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument(
                "distance needs at least one column".into(),
            ));
        }
        if metric == Metric::LinearGps && columns.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "linear GPS distance takes exactly one column, got {}",
                columns.len()
            )));
        }
        Ok(Self { metric, columns })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    /// Moore-Penrose pseudo-inverse over the retained spectrum.
    pub inverse: DMatrix<f64>,
    pub rank: usize,
    /// Smallest retained eigenvalue.
    pub eigen_floor: f64,
    /// Rows are retained eigenvectors scaled by `1/sqrt(λ)`; mapping a vector
    /// through it turns Mahalanobis distance into Euclidean distance.
    whitening: DMatrix<f64>,
}

impl CovarianceEstimate {
    /// Pseudo-inverse decomposition of a given symmetric matrix.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Dimension(
                "covariance must be square and non-empty".into(),
            ));
        }
        let d = matrix.nrows();
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let lambda_max = eig.eigenvalues.max();
        let cutoff = EIGEN_FLOOR * lambda_max;
        let mut retained: Vec<usize> = (0..d)
            .filter(|&k| {
                lambda_max > 0.0 && eig.eigenvalues[k] >= cutoff && eig.eigenvalues[k] > 0.0
            })
            .collect();
        retained.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let rank = retained.len();
        let mut whitening = DMatrix::zeros(rank, d);
        let mut inverse = DMatrix::zeros(d, d);
        let mut floor = f64::INFINITY;
        for (r, &k) in retained.iter().enumerate() {
            let lambda = eig.eigenvalues[k];
            floor = floor.min(lambda);
            let v = eig.eigenvectors.column(k);
            whitening
                .row_mut(r)
                .copy_from(&(v.transpose() / lambda.sqrt()));
            inverse += v * v.transpose() / lambda;
        }
        Ok(Self {
            matrix,
            inverse,
            rank,
            eigen_floor: if rank == 0 { 0.0 } else { floor },
            whitening,
        })
    }

    /// Maps rows of `data` (already restricted to the metric's columns) into the
    /// whitened space.
    pub fn whiten(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        data * self.whitening.transpose()
    }
}

/// Sample covariance (denominator `n - 1`) and its pseudo-inverse.
pub fn estimate_covariance(data: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let means = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    CovarianceEstimate::from_matrix(cov)
}

fn select(data: &DMatrix<f64>, columns: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(&c) = columns.iter().find(|&&c| c >= data.ncols()) {
        return Err(Error::Dimension(format!(
            "column {c} requested from a matrix with {} columns",
            data.ncols()
        )));
    }
    Ok(data.select_columns(columns.iter()))
}

/// Feature rows prepared for repeated distance evaluation.
///
/// `Projected::prepare` applies column selection and, for Mahalanobis, whitening;
/// afterwards every metric is evaluated as a plain norm on the prepared rows.
#[derive(Debug, Clone)]
pub struct Projected {
    metric: Metric,
    rows: DMatrix<f64>,
}

impl Projected {
    pub fn prepare(
        data: &DMatrix<f64>,
        spec: &DistanceSpec,
        cov: Option<&CovarianceEstimate>,
    ) -> Result<Self> {
        let selected = select(data, spec.columns())?;
        let rows = match spec.metric() {
            Metric::Mahalanobis => {
                let cov = cov.ok_or_else(|| {
                    Error::InvalidArgument("Mahalanobis distance needs a covariance".into())
                })?;
                if cov.matrix.nrows() != selected.ncols() {
                    return Err(Error::Dimension(format!(
                        "covariance is {}x{}, data has {} columns",
                        cov.matrix.nrows(),
                        cov.matrix.ncols(),
                        selected.ncols()
                    )));
                }
                cov.whiten(&selected)
            }
            _ => selected,
        };
        Ok(Self {
            metric: spec.metric(),
            rows,
        })
    }

    /// Distance between prepared row `i` of `self` and row `j` of `other`.
    pub fn distance(&self, i: usize, other: &Projected, j: usize) -> f64 {
        match self.metric {
            Metric::LinearGps => (self.rows[(i, 0)] - other.rows[(j, 0)]).abs(),
            Metric::Euclidean | Metric::Mahalanobis => {
                let mut ss = 0.0;
                for c in 0..self.rows.ncols() {
                    let d = self.rows[(i, c)] - other.rows[(j, c)];
                    ss += d * d;
                }
                ss.sqrt()
            }
        }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

/// Full `a × b` distance matrix between the rows of `reference` and `candidates`.
///
/// When the metric is Mahalanobis and no covariance is given, it is estimated on
/// the union of both row sets.
pub fn pairwise_distances(
    reference: &DMatrix<f64>,
    candidates: &DMatrix<f64>,
    spec: &DistanceSpec,
    cov: Option<&CovarianceEstimate>,
) -> Result<DMatrix<f64>> {
    if reference.ncols() != candidates.ncols() {
        return Err(Error::Dimension(format!(
            "reference has {} columns, candidates have {}",
            reference.ncols(),
            candidates.ncols()
        )));
    }
    let pooled;
    let cov = match (spec.metric(), cov) {
        (Metric::Mahalanobis, None) => {
            let union = select(&stack_rows(reference, candidates), spec.columns())?;
            pooled = estimate_covariance(&union)?;
            Some(&pooled)
        }
        (_, c) => c,
    };
    let a = Projected::prepare(reference, spec, cov)?;
    let b = Projected::prepare(candidates, spec, cov)?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
        a.distance(i, &b, j)
    }))
}

pub(crate) fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}
