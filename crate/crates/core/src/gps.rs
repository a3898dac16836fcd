//! Generalized propensity score: multinomial logit fit, prediction, logit
//! transform and rectangular common-support trimming.

use std::io::Write;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::Cohort;
use crate::error::{Error, Result};

/// Lower clamp for predicted probabilities; the upper clamp is `1 - PROB_FLOOR`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Coefficients above this magnitude flag quasi-complete separation.
const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when the largest absolute score component falls below this.
    pub score_tolerance: f64,
    /// Stop when the relative change in log-likelihood falls below this.
    pub relative_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            score_tolerance: 1e-8,
            relative_tolerance: 1e-12,
        }
    }
}

/// A fitted softmax regression with intercept. Row `k` of `coefficients` holds the
/// log-odds of group `k + 1` against the reference group 0, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsModel {
    pub coefficients: DMatrix<f64>,
    pub reference_category: usize,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood at the start value and after every accepted Newton step.
    pub log_likelihood_trace: Vec<f64>,
    pub quasi_separation: bool,
    pub warnings: Vec<String>,
}

impl GpsModel {
    pub fn z(&self) -> usize {
        self.coefficients.nrows() + 1
    }

    pub fn p(&self) -> usize {
        self.coefficients.ncols() - 1
    }

    /// A model with the given coefficient rows and no fit history.
    pub fn from_coefficients(coefficients: DMatrix<f64>) -> Self {
        Self {
            coefficients,
            reference_category: 0,
            converged: true,
            iterations: 0,
            log_likelihood: f64::NAN,
            log_likelihood_trace: Vec::new(),
            quasi_separation: false,
            warnings: Vec::new(),
        }
    }
}

/// Estimated assignment probabilities, one row per unit, one column per group.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsMatrix {
    probs: DMatrix<f64>,
}

impl GpsMatrix {
    /// Wraps a probability matrix, clamping entries into `[1e-12, 1 - 1e-12]`
    /// and renormalizing rows.
    pub fn from_probabilities(mut probs: DMatrix<f64>) -> Result<Self> {
        if probs.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        for mut row in probs.row_iter_mut() {
            for v in row.iter_mut() {
                *v = v.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            }
            let s: f64 = row.iter().sum();
            row /= s;
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn z(&self) -> usize {
        self.probs.ncols()
    }

    pub fn get(&self, unit: usize, group: usize) -> f64 {
        self.probs[(unit, group)]
    }

    pub fn select_rows(&self, rows: &[usize]) -> GpsMatrix {
        GpsMatrix {
            probs: self.probs.select_rows(rows.iter()),
        }
    }
}

fn design_matrix(cohort: &Cohort) -> DMatrix<f64> {
    let n = cohort.n();
    let mut x = DMatrix::from_element(n, cohort.p() + 1, 1.0);
    x.columns_mut(1, cohort.p()).copy_from(cohort.covariates());
    x
}

/// Softmax probabilities for a design matrix and a (Z-1)×q coefficient block.
fn softmax_probs(x: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let z = beta.nrows() + 1;
    let eta = x * beta.transpose();
    let mut probs = DMatrix::zeros(n, z);
    for i in 0..n {
        let max = eta.row(i).iter().fold(0.0f64, |a, &b| a.max(b));
        let mut denom = (-max).exp();
        for k in 0..z - 1 {
            denom += (eta[(i, k)] - max).exp();
        }
        probs[(i, 0)] = (-max).exp() / denom;
        for k in 1..z {
            probs[(i, k)] = (eta[(i, k - 1)] - max).exp() / denom;
        }
    }
    probs
}

fn log_likelihood(x: &DMatrix<f64>, beta: &DMatrix<f64>, y: &[usize]) -> f64 {
    let eta = x * beta.transpose();
    (0..x.nrows())
        .map(|i| {
            let max = eta.row(i).iter().fold(0.0f64, |a, &b| a.max(b));
            let mut lse = (-max).exp();
            for k in 0..beta.nrows() {
                lse += (eta[(i, k)] - max).exp();
            }
            let lse = max + lse.ln();
            let own = if y[i] == 0 { 0.0 } else { eta[(i, y[i] - 1)] };
            own - lse
        })
        .sum()
}

/// Score vector and observed information for the stacked parameter vector
/// (category-major, `k * q + j`).
fn score_and_information(
    x: &DMatrix<f64>,
    probs: &DMatrix<f64>,
    y: &[usize],
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, q) = x.shape();
    let m = probs.ncols() - 1;
    let dim = m * q;
    let mut score = DVector::zeros(dim);
    let mut info = DMatrix::zeros(dim, dim);
    for k in 0..m {
        let resid: DVector<f64> =
            DVector::from_fn(n, |i, _| f64::from(y[i] == k + 1) - probs[(i, k + 1)]);
        score.rows_mut(k * q, q).copy_from(&(x.transpose() * resid));
        for l in k..m {
            let weights = DVector::from_fn(n, |i, _| {
                let pk = probs[(i, k + 1)];
                let pl = probs[(i, l + 1)];
                if k == l {
                    pk * (1.0 - pk)
                } else {
                    -pk * pl
                }
            });
            let mut weighted = x.clone();
            for mut col in weighted.column_iter_mut() {
                col.component_mul_assign(&weights);
            }
            let block = x.transpose() * weighted;
            info.view_mut((k * q, l * q), (q, q)).copy_from(&block);
            if l != k {
                info.view_mut((l * q, k * q), (q, q))
                    .copy_from(&block.transpose());
            }
        }
    }
    (score, info)
}

fn solve_newton(info: &DMatrix<f64>, score: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = Cholesky::new(info.clone()) {
        return chol.solve(score);
    }
    let mut jitter = 1e-8;
    loop {
        let mut ridged = info.clone();
        for d in 0..ridged.nrows() {
            ridged[(d, d)] += jitter;
        }
        if let Some(chol) = Cholesky::new(ridged) {
            return chol.solve(score);
        }
        jitter *= 10.0;
    }
}

/// Maximum-likelihood multinomial logit of treatment on the covariates.
pub fn fit_gps(cohort: &Cohort) -> Result<GpsModel> {
    fit_gps_with(cohort, &FitOptions::default())
}

pub fn fit_gps_with(cohort: &Cohort, options: &FitOptions) -> Result<GpsModel> {
    let x = design_matrix(cohort);
    let y = cohort.treatments();
    let z = cohort.z();
    let q = x.ncols();
    let mut warnings = Vec::new();
    if cohort.n() <= z * q {
        let msg = format!(
            "only {} units for {} groups and {} terms; estimates may be unstable",
            cohort.n(),
            z,
            q
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    let mut beta = DMatrix::zeros(z - 1, q);
    let mut ll = log_likelihood(&x, &beta, y);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        let probs = softmax_probs(&x, &beta);
        let (score, info) = score_and_information(&x, &probs, y);
        if score.amax() < options.score_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let step = solve_newton(&info, &score);
        let step = DMatrix::from_row_slice(z - 1, q, step.as_slice());

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &beta + &step * scale;
            let cand_ll = log_likelihood(&x, &candidate, y);
            if cand_ll.is_finite() && cand_ll >= ll {
                accepted = Some((candidate, cand_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            // no ascent direction left at machine precision
            converged = true;
            break;
        };
        let rel = (next_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        beta = next;
        ll = next_ll;
        trace.push(ll);
        if rel < options.relative_tolerance {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NoConvergence { iterations });
    }
    let quasi_separation = beta.iter().any(|c| c.abs() > SEPARATION_BOUND);
    if quasi_separation {
        let msg = "coefficient magnitude above 30: possible quasi-complete separation".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(GpsModel {
        coefficients: beta,
        reference_category: 0,
        converged,
        iterations,
        log_likelihood: ll,
        log_likelihood_trace: trace,
        quasi_separation,
        warnings,
    })
}

/// Predicted assignment probabilities for every unit of `cohort`.
pub fn predict_gps(model: &GpsModel, cohort: &Cohort) -> Result<GpsMatrix> {
    if model.p() != cohort.p() {
        return Err(Error::Dimension(format!(
            "model has {} covariates, cohort has {}",
            model.p(),
            cohort.p()
        )));
    }
    let x = design_matrix(cohort);
    GpsMatrix::from_probabilities(softmax_probs(&x, &model.coefficients))
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Elementwise `log(p / (1 - p))` of the GPS matrix.
pub fn logit_gps(gps: &GpsMatrix) -> DMatrix<f64> {
    gps.probs.map(logit)
}

/// Rectangular common-support eligibility.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityMask {
    pub eligible: Vec<bool>,
    /// `(r_min(w), r_max(w))` per group column.
    pub bounds: Vec<(f64, f64)>,
}

impl EligibilityMask {
    pub fn eligible_rows(&self) -> Vec<usize> {
        (0..self.eligible.len())
            .filter(|&i| self.eligible[i])
            .collect()
    }

    pub fn count(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }
}

/// Units whose every GPS component lies strictly inside the interval bounded by
/// the largest group-wise minimum and the smallest group-wise maximum.
pub fn common_support(gps: &GpsMatrix, cohort: &Cohort) -> Result<EligibilityMask> {
    if gps.n() != cohort.n() || gps.z() != cohort.z() {
        return Err(Error::Dimension(format!(
            "GPS is {}x{}, cohort has {} units in {} groups",
            gps.n(),
            gps.z(),
            cohort.n(),
            cohort.z()
        )));
    }
    let z = cohort.z();
    let bounds: Vec<(f64, f64)> = (0..z)
        .map(|col| {
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for g in 0..z {
                let (gmin, gmax) = cohort
                    .members(g)
                    .iter()
                    .map(|&i| gps.get(i, col))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                        (a.min(v), b.max(v))
                    });
                lo = lo.max(gmin);
                hi = hi.min(gmax);
            }
            (lo, hi)
        })
        .collect();
    let eligible: Vec<bool> = (0..cohort.n())
        .map(|i| {
            bounds
                .iter()
                .enumerate()
                .all(|(w, &(lo, hi))| gps.get(i, w) > lo && gps.get(i, w) < hi)
        })
        .collect();
    if !eligible.iter().any(|&e| e) {
        return Err(Error::EmptySupport);
    }
    Ok(EligibilityMask { eligible, bounds })
}

/// Result of the fit, trim and single refit protocol.
#[derive(Debug, Clone)]
pub struct TrimmedCohort {
    /// Eligible units only.
    pub cohort: Cohort,
    /// Row in the input cohort of each eligible unit.
    pub original_rows: Vec<usize>,
    pub initial_model: GpsModel,
    /// Model refit on the eligible units.
    pub model: GpsModel,
    /// Probabilities from the refit model, one row per eligible unit.
    pub gps: GpsMatrix,
    /// Mask over the input cohort from the initial fit.
    pub mask: EligibilityMask,
}

/// Fits, drops units outside the common support and refits exactly once.
pub fn trim_and_refit(cohort: &Cohort) -> Result<TrimmedCohort> {
    let initial_model = fit_gps(cohort)?;
    let initial_gps = predict_gps(&initial_model, cohort)?;
    let mask = common_support(&initial_gps, cohort)?;
    let rows = mask.eligible_rows();
    let mut sizes = vec![0usize; cohort.z()];
    for &i in &rows {
        sizes[cohort.treatment(i)] += 1;
    }
    if let Some(w) = sizes.iter().position(|&s| s < 2) {
        return Err(Error::GroupEmptied(cohort.label(w).to_string()));
    }
    let trimmed = cohort.subset(&rows)?;
    let model = fit_gps(&trimmed)?;
    let gps = predict_gps(&model, &trimmed)?;
    Ok(TrimmedCohort {
        cohort: trimmed,
        original_rows: rows,
        initial_model,
        model,
        gps,
        mask,
    })
}

/// Coefficient dump: `category,term,estimate`.
pub fn write_model<W: Write>(model: &GpsModel, cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "term", "estimate"])?;
    for k in 0..model.coefficients.nrows() {
        for j in 0..model.coefficients.ncols() {
            let term = if j == 0 {
                "(intercept)"
            } else {
                cohort.covariate_names()[j - 1].as_str()
            };
            w.write_record([
                cohort.label(k + 1),
                term,
                &model.coefficients[(k, j)].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<model output>", e))?;
    Ok(())
}

/// Eligibility dump: `id,eligible` with 1/0 flags.
pub fn write_eligibility<W: Write>(mask: &EligibilityMask, cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "eligible"])?;
    for (id, &e) in cohort.unit_ids().iter().zip(&mask.eligible) {
        w.write_record([id.as_str(), if e { "1" } else { "0" }])?;
    }
    w.flush()
        .map_err(|e| Error::io("<eligibility output>", e))?;
    Ok(())
}
