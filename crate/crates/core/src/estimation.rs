//! Pairwise treatment-effect estimates on a matched cohort.
//!
//! Group means are `ψ`-weighted. Standard errors combine `ψ`-weighted variances
//! with Kish effective sample sizes `(Σψ)² / Σψ²`, so reused matches widen the
//! interval.

use std::io::Write;

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::matching::MatchedSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupOutcome {
    pub mean: f64,
    /// `ψ`-weighted variance with denominator `Σψ`.
    pub variance: f64,
    pub effective_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEstimate {
    pub first: usize,
    pub second: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub significant_05: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttEstimates {
    pub reference: usize,
    pub groups: Vec<GroupOutcome>,
    /// Every pair `(j, k)` with `j < k`.
    pub pairs: Vec<PairEstimate>,
}

impl AttEstimates {
    /// Difference of matched means for any ordered pair.
    pub fn contrast(&self, j: usize, k: usize) -> PairEstimate {
        pair_estimate(&self.groups, j, k)
    }
}

fn pair_estimate(groups: &[GroupOutcome], j: usize, k: usize) -> PairEstimate {
    let (a, b) = (&groups[j], &groups[k]);
    let estimate = a.mean - b.mean;
    let std_error = (a.variance / a.effective_n + b.variance / b.effective_n).sqrt();
    PairEstimate {
        first: j,
        second: k,
        estimate,
        std_error,
        significant_05: estimate.abs() > 1.96 * std_error,
    }
}

pub fn estimate_att(cohort: &Cohort, matched: &MatchedSet) -> Result<AttEstimates> {
    let y = cohort.outcomes().ok_or(Error::MissingOutcomes)?;
    if matched.psi.len() != cohort.n() {
        return Err(Error::Dimension(format!(
            "{} weights for {} units",
            matched.psi.len(),
            cohort.n()
        )));
    }
    let z = cohort.z();
    let mut sw = vec![0.0; z];
    let mut sw2 = vec![0.0; z];
    let mut swy = vec![0.0; z];
    for (i, &w) in matched.psi.iter().enumerate() {
        if w > 0 {
            let g = cohort.treatment(i);
            let w = f64::from(w);
            sw[g] += w;
            sw2[g] += w * w;
            swy[g] += w * y[i];
        }
    }
    if let Some(g) = sw.iter().position(|&s| s == 0.0) {
        return Err(Error::EmptyMatchedGroup(cohort.label(g).to_string()));
    }
    let means: Vec<f64> = (0..z).map(|g| swy[g] / sw[g]).collect();
    let mut ss = vec![0.0; z];
    for (i, &w) in matched.psi.iter().enumerate() {
        if w > 0 {
            let g = cohort.treatment(i);
            let d = y[i] - means[g];
            ss[g] += f64::from(w) * d * d;
        }
    }
    let groups: Vec<GroupOutcome> = (0..z)
        .map(|g| GroupOutcome {
            mean: means[g],
            variance: ss[g] / sw[g],
            effective_n: sw[g] * sw[g] / sw2[g],
        })
        .collect();
    let pairs = (0..z)
        .flat_map(|j| (j + 1..z).map(move |k| (j, k)))
        .map(|(j, k)| pair_estimate(&groups, j, k))
        .collect();
    Ok(AttEstimates {
        reference: matched.reference,
        groups,
        pairs,
    })
}

/// `pair,estimate,std_error,significant` at 4 decimals.
pub fn write_estimates<W: Write>(est: &AttEstimates, cohort: &Cohort, mut out: W) -> Result<()> {
    let mut text = String::from("pair,estimate,std_error,significant\n");
    for p in &est.pairs {
        text.push_str(&format!(
            "{}-{},{:.4},{:.4},{}\n",
            cohort.label(p.first),
            cohort.label(p.second),
            p.estimate,
            p.std_error,
            p.significant_05
        ));
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<estimates output>", e))
}
