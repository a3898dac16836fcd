//! Covariate balance of a matched (or pre-matched) cohort.

use std::io::Write;

use nalgebra::DMatrix;

use crate::data::{sample_sd, Cohort};
use crate::error::{Error, Result};
use crate::matching::MatchedSet;

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    /// Ordered group pairs `(j, k)` with `j < k`, the column order of `sb`.
    pub pairs: Vec<(usize, usize)>,
    /// Standardized bias, `P × pairs`.
    pub sb: DMatrix<f64>,
    pub max2sb: Vec<f64>,
    pub maxmax2sb: f64,
    pub meanmax2sb: f64,
    pub prop_matched: f64,
    /// Denominator `δ_pt` per covariate.
    pub denominators: Vec<f64>,
    /// Weighted means, `P × Z`.
    pub means: DMatrix<f64>,
}

impl BalanceReport {
    /// `SB_pjk` for any ordered pair, using antisymmetry for `j > k`.
    pub fn sb(&self, p: usize, j: usize, k: usize) -> f64 {
        if j == k {
            return 0.0;
        }
        let (a, b, sign) = if j < k { (j, k, 1.0) } else { (k, j, -1.0) };
        let col = self
            .pairs
            .iter()
            .position(|&pr| pr == (a, b))
            .expect("pair within group range");
        sign * self.sb[(p, col)]
    }
}

/// `X̄_pw = Σ_i X_pi T_iw ψ_iw / n_wm`, as a `P × Z` matrix.
pub fn weighted_means(cohort: &Cohort, psi: &[u32]) -> Result<DMatrix<f64>> {
    if psi.len() != cohort.n() {
        return Err(Error::Dimension(format!(
            "{} weights for {} units",
            psi.len(),
            cohort.n()
        )));
    }
    let (p, z) = (cohort.p(), cohort.z());
    let mut sums = DMatrix::zeros(p, z);
    let mut totals = vec![0u64; z];
    for (i, &w) in psi.iter().enumerate() {
        if w == 0 {
            continue;
        }
        let g = cohort.treatment(i);
        totals[g] += u64::from(w);
        for c in 0..p {
            sums[(c, g)] += cohort.covariates()[(i, c)] * f64::from(w);
        }
    }
    for (g, &t) in totals.iter().enumerate() {
        if t == 0 {
            return Err(Error::EmptyMatchedGroup(cohort.label(g).to_string()));
        }
        sums.column_mut(g).scale_mut(1.0 / t as f64);
    }
    Ok(sums)
}

/// Standard deviation of every covariate among group-`reference` units of the
/// full (untrimmed) sample.
pub fn reference_deltas(full: &Cohort, reference: usize) -> Result<Vec<f64>> {
    let members = full.members(reference);
    (0..full.p())
        .map(|c| {
            let col: Vec<f64> = members.iter().map(|&i| full.covariates()[(i, c)]).collect();
            let sd = sample_sd(&col);
            if sd > 0.0 {
                Ok(sd)
            } else {
                Err(Error::ZeroDelta(full.covariate_names()[c].clone()))
            }
        })
        .collect()
}

/// Balance metrics of `matched` over `cohort`, standardized by `deltas`.
pub fn balance_report(
    cohort: &Cohort,
    matched: &MatchedSet,
    deltas: &[f64],
) -> Result<BalanceReport> {
    if deltas.len() != cohort.p() {
        return Err(Error::Dimension(format!(
            "{} denominators for {} covariates",
            deltas.len(),
            cohort.p()
        )));
    }
    if let Some(c) = deltas.iter().position(|&d| d.is_nan() || d <= 0.0) {
        return Err(Error::ZeroDelta(cohort.covariate_names()[c].clone()));
    }
    let means = weighted_means(cohort, &matched.psi)?;
    let z = cohort.z();
    let pairs: Vec<(usize, usize)> = (0..z)
        .flat_map(|j| (j + 1..z).map(move |k| (j, k)))
        .collect();
    let sb = DMatrix::from_fn(cohort.p(), pairs.len(), |p, c| {
        let (j, k) = pairs[c];
        (means[(p, j)] - means[(p, k)]) / deltas[p]
    });
    let max2sb: Vec<f64> = sb
        .row_iter()
        .map(|row| row.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .collect();
    let maxmax2sb = max2sb.iter().cloned().fold(0.0, f64::max);
    let meanmax2sb = max2sb.iter().sum::<f64>() / max2sb.len() as f64;
    Ok(BalanceReport {
        pairs,
        sb,
        max2sb,
        maxmax2sb,
        meanmax2sb,
        prop_matched: matched.prop_matched(),
        denominators: deltas.to_vec(),
        means,
    })
}

/// Long-format SB rows, then `covariate,max2sb`, then the three scalars, with
/// blank lines between blocks. Values use 4 decimals.
pub fn write_balance<W: Write>(report: &BalanceReport, cohort: &Cohort, mut out: W) -> Result<()> {
    let io = |e| Error::io("<balance output>", e);
    let names = cohort.covariate_names();
    let mut text = String::from("covariate,pair,sb\n");
    for (p, name) in names.iter().enumerate() {
        for (c, &(j, k)) in report.pairs.iter().enumerate() {
            text.push_str(&format!(
                "{},{}-{},{:.4}\n",
                name,
                cohort.label(j),
                cohort.label(k),
                report.sb[(p, c)]
            ));
        }
    }
    text.push_str("\ncovariate,max2sb\n");
    for (name, v) in names.iter().zip(&report.max2sb) {
        text.push_str(&format!("{name},{v:.4}\n"));
    }
    text.push_str("\nmaxmax2sb,meanmax2sb,prop_matched\n");
    text.push_str(&format!(
        "{:.4},{:.4},{:.4}\n",
        report.maxmax2sb, report.meanmax2sb, report.prop_matched
    ));
    out.write_all(text.as_bytes()).map_err(io)
}
