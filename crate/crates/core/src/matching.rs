//! Matching engine for a reference treatment against every other treatment.
//!
//! For each opposite group `t'` the units are stratified (k-means, fuzzy c-means
//! or not at all) on the logit-GPS columns other than `t` and `t'`, reference
//! units are matched to `t'` units sharing a stratum, and the final cohort keeps
//! the reference units matched in every pair together with their matches.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::clustering::{fuzzy_cmeans, kmeans, threshold_assign, ClusterSets};
use crate::data::{sample_sd, Cohort};
use crate::distance::{estimate_covariance, stack_rows, DistanceSpec, Metric, Projected};
use crate::error::{Error, Result};
use crate::gps::{logit_gps, GpsMatrix};
use crate::seeds::derive_seed;

/// The twelve matching algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Vm,
    Vm2,
    VmNc,
    VmNr,
    Vmf,
    Km,
    KmNc,
    Fm,
    FmNc,
    Gps,
    GpsNc,
    CovNc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 12] = [
        Algorithm::Vm,
        Algorithm::Vm2,
        Algorithm::VmNc,
        Algorithm::VmNr,
        Algorithm::Vmf,
        Algorithm::Km,
        Algorithm::KmNc,
        Algorithm::Fm,
        Algorithm::FmNc,
        Algorithm::Gps,
        Algorithm::GpsNc,
        Algorithm::CovNc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Vm => "VM",
            Algorithm::Vm2 => "VM2",
            Algorithm::VmNc => "VMnc",
            Algorithm::VmNr => "VMnr",
            Algorithm::Vmf => "VMF",
            Algorithm::Km => "KM",
            Algorithm::KmNc => "KMnc",
            Algorithm::Fm => "FM",
            Algorithm::FmNc => "FMnc",
            Algorithm::Gps => "GPS",
            Algorithm::GpsNc => "GPSnc",
            Algorithm::CovNc => "COVnc",
        }
    }

    pub fn spec(self) -> AlgorithmSpec {
        AlgorithmSpec::of(self)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.label().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{t}`")))
    }
}

/// What the distance is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Features {
    /// `logit r(t, X)` alone.
    ReferenceLogit,
    /// `{logit r(t, X), logit r(t', X)}`.
    PairLogits,
    /// The full logit-GPS vector.
    AllLogits,
    /// Raw covariates.
    Covariates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stratification {
    KMeans,
    Fuzzy,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlgorithmSpec {
    pub algorithm: Algorithm,
    pub metric: Metric,
    pub features: Features,
    pub caliper: bool,
    pub clustering: Stratification,
    pub ratio: usize,
    pub replacement: bool,
}

impl AlgorithmSpec {
    pub fn of(algorithm: Algorithm) -> Self {
        use Algorithm::*;
        let (metric, features) = match algorithm {
            Vm | Vm2 | VmNc | VmNr | Vmf => (Metric::LinearGps, Features::ReferenceLogit),
            Km | KmNc | Fm | FmNc => (Metric::Mahalanobis, Features::PairLogits),
            Gps | GpsNc => (Metric::Mahalanobis, Features::AllLogits),
            CovNc => (Metric::Mahalanobis, Features::Covariates),
        };
        let caliper = matches!(algorithm, Vm | Vm2 | VmNr | Vmf | Km | Fm | Gps);
        let clustering = match algorithm {
            Vm | Vm2 | VmNc | VmNr | Km | KmNc => Stratification::KMeans,
            Vmf | Fm | FmNc => Stratification::Fuzzy,
            Gps | GpsNc | CovNc => Stratification::None,
        };
        Self {
            algorithm,
            metric,
            features,
            caliper,
            clustering,
            ratio: if algorithm == Vm2 { 2 } else { 1 },
            replacement: algorithm != VmNr,
        }
    }
}

/// Tuning knobs shared by every algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    /// Number of clusters `K`.
    pub clusters: usize,
    /// Fuzzy c-means exponent.
    pub fuzzy_m: f64,
    /// Caliper multiplier on the standard deviation.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            clusters: 5,
            fuzzy_m: 2.0,
            epsilon: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub reference: usize,
    pub matched: usize,
    pub distance: f64,
}

/// Links between the reference group and one opposite group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairMatching {
    pub links: Vec<Link>,
    /// Reference units with a full complement of matches, ascending.
    pub matched_refs: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchOptions {
    pub ratio: usize,
    pub replacement: bool,
}

/// `epsilon` times the sample standard deviation of `values`.
pub fn caliper_width(values: &[f64], epsilon: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "caliper needs at least 2 values, got {}",
            values.len()
        )));
    }
    Ok(epsilon * sample_sd(values))
}

/// Nearest-neighbour matching of `refs` to `cands`.
///
/// `distance(r, c)` and `admissible(r, c)` take unit indices. With replacement
/// every reference unit independently takes its `ratio` closest admissible
/// candidates (ties to the lower candidate index). Without replacement all
/// admissible pairs are visited in `(distance, ref, cand)` order and accepted
/// while both ends are still free. Reference units that end up with fewer than
/// `ratio` links are left out of `matched_refs`.
pub fn nn_match<D, A>(
    refs: &[usize],
    cands: &[usize],
    distance: D,
    admissible: A,
    options: MatchOptions,
) -> PairMatching
where
    D: Fn(usize, usize) -> f64,
    A: Fn(usize, usize) -> bool,
{
    let mut refs = refs.to_vec();
    refs.sort_unstable();
    let mut cands = cands.to_vec();
    cands.sort_unstable();
    let ratio = options.ratio.max(1);

    if options.replacement {
        let mut out = PairMatching::default();
        let mut pool: Vec<(f64, usize)> = Vec::with_capacity(cands.len());
        for &r in &refs {
            pool.clear();
            pool.extend(
                cands
                    .iter()
                    .filter(|&&c| admissible(r, c))
                    .map(|&c| (distance(r, c), c))
                    .filter(|(d, _)| d.is_finite()),
            );
            if pool.len() < ratio {
                continue;
            }
            if pool.len() > ratio {
                pool.select_nth_unstable_by(ratio - 1, |a, b| {
                    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
                });
                pool.truncate(ratio);
            }
            pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            out.links.extend(pool.iter().map(|&(d, c)| Link {
                reference: r,
                matched: c,
                distance: d,
            }));
            out.matched_refs.push(r);
        }
        return out;
    }

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for &r in &refs {
        for &c in &cands {
            if admissible(r, c) {
                let d = distance(r, c);
                if d.is_finite() {
                    pairs.push((d, r, c));
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut ref_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut used = std::collections::HashSet::new();
    let mut links = Vec::new();
    for (d, r, c) in pairs {
        let count = ref_count.entry(r).or_insert(0);
        if *count >= ratio || used.contains(&c) {
            continue;
        }
        *count += 1;
        used.insert(c);
        links.push(Link {
            reference: r,
            matched: c,
            distance: d,
        });
    }
    links.sort_by(|a, b| {
        a.reference
            .cmp(&b.reference)
            .then(a.distance.total_cmp(&b.distance))
            .then(a.matched.cmp(&b.matched))
    });
    let matched_refs = ref_count
        .into_iter()
        .filter(|&(_, c)| c == ratio)
        .map(|(r, _)| r)
        .collect();
    PairMatching {
        links,
        matched_refs,
    }
}

/// Componentwise caliper: every listed column must differ by at most its width.
#[derive(Debug, Clone)]
pub struct Caliper {
    columns: DMatrix<f64>,
    widths: Vec<f64>,
}

impl Caliper {
    /// Widths are `epsilon * sd` of each column over all rows.
    pub fn from_columns(columns: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        let widths = columns
            .column_iter()
            .map(|c| caliper_width(c.as_slice(), epsilon))
            .collect::<Result<_>>()?;
        Ok(Self { columns, widths })
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn admits(&self, a: usize, b: usize) -> bool {
        self.widths
            .iter()
            .enumerate()
            .all(|(c, &w)| (self.columns[(a, c)] - self.columns[(b, c)]).abs() <= w)
    }
}

/// The final matched cohort for a reference treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedSet {
    pub algorithm: Option<Algorithm>,
    pub reference: usize,
    /// Reference units matched in every pair, ascending.
    pub retained_refs: Vec<usize>,
    /// `ψ`: how often each unit appears in the matched cohort (1 for retained
    /// reference units, match multiplicity for the others).
    pub psi: Vec<u32>,
    /// Matched count per group, multiplicity included.
    pub n_wm: Vec<usize>,
    /// Reference-group units available before matching.
    pub eligible_refs: usize,
    /// Links of retained reference units, per opposite group.
    pub pair_links: Vec<(usize, Vec<Link>)>,
    pub warnings: Vec<String>,
}

impl MatchedSet {
    /// Rebuilds a matched set from multiplicity weights alone.
    pub fn from_weights(
        cohort: &Cohort,
        reference: usize,
        psi: Vec<u32>,
        eligible_refs: usize,
    ) -> Result<Self> {
        if psi.len() != cohort.n() {
            return Err(Error::Dimension(format!(
                "{} weights for {} units",
                psi.len(),
                cohort.n()
            )));
        }
        let retained_refs: Vec<usize> = (0..cohort.n())
            .filter(|&i| cohort.treatment(i) == reference && psi[i] > 0)
            .collect();
        let n_wm = group_totals(cohort, &psi);
        Ok(Self {
            algorithm: None,
            reference,
            retained_refs,
            psi,
            n_wm,
            eligible_refs,
            pair_links: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Every unit once: the pre-matched cohort.
    pub fn unmatched(cohort: &Cohort, reference: usize) -> Self {
        let refs = cohort.members(reference).len();
        Self::from_weights(cohort, reference, vec![1; cohort.n()], refs)
            .expect("weights sized to cohort")
    }

    pub fn is_empty(&self) -> bool {
        self.retained_refs.is_empty()
    }

    pub fn prop_matched(&self) -> f64 {
        if self.eligible_refs == 0 {
            0.0
        } else {
            self.retained_refs.len() as f64 / self.eligible_refs as f64
        }
    }
}

fn group_totals(cohort: &Cohort, psi: &[u32]) -> Vec<usize> {
    let mut totals = vec![0usize; cohort.z()];
    for (i, &w) in psi.iter().enumerate() {
        totals[cohort.treatment(i)] += w as usize;
    }
    totals
}

fn strata(
    logits: &DMatrix<f64>,
    spec: &AlgorithmSpec,
    t: usize,
    other: usize,
    config: &MatchConfig,
    seed: u64,
) -> Result<ClusterSets> {
    let n = logits.nrows();
    let columns: Vec<usize> = (0..logits.ncols())
        .filter(|&w| w != t && w != other)
        .collect();
    if spec.clustering == Stratification::None || columns.is_empty() {
        return Ok(ClusterSets::single(n));
    }
    let data = logits.select_columns(columns.iter());
    let k = config.clusters.clamp(1, n);
    match spec.clustering {
        Stratification::KMeans => {
            let hc = kmeans(&data, k, seed)?;
            Ok(ClusterSets::from_assignment(&hc.assignment, k))
        }
        Stratification::Fuzzy => Ok(threshold_assign(&fuzzy_cmeans(
            &data,
            k,
            config.fuzzy_m,
            seed,
        )?)),
        Stratification::None => unreachable!(),
    }
}

/// Matches reference group `t` against one opposite group.
fn match_pair(
    cohort: &Cohort,
    logits: &DMatrix<f64>,
    spec: &AlgorithmSpec,
    t: usize,
    other: usize,
    config: &MatchConfig,
) -> Result<PairMatching> {
    let refs = cohort.members(t);
    let cands = cohort.members(other);
    let seed = derive_seed(config.seed, &[t as u64, other as u64]);
    let sets = strata(logits, spec, t, other, config, seed)?;

    let (features, columns): (&DMatrix<f64>, Vec<usize>) = match spec.features {
        Features::ReferenceLogit => (logits, vec![t]),
        Features::PairLogits => (logits, vec![t, other]),
        Features::AllLogits => (logits, (0..logits.ncols()).collect()),
        Features::Covariates => (cohort.covariates(), (0..cohort.p()).collect()),
    };
    let dspec = DistanceSpec::new(spec.metric, columns.clone())?;
    let cov = if spec.metric == Metric::Mahalanobis {
        let pooled = stack_rows(
            &features.select_rows(refs.iter()),
            &features.select_rows(cands.iter()),
        )
        .select_columns(columns.iter());
        Some(estimate_covariance(&pooled)?)
    } else {
        None
    };
    let projected = Projected::prepare(features, &dspec, cov.as_ref())?;
    let distance = |a: usize, b: usize| projected.distance(a, &projected, b);

    let caliper = if spec.caliper {
        Some(Caliper::from_columns(
            logits.select_columns(columns.iter()),
            config.epsilon,
        )?)
    } else {
        None
    };
    let options = MatchOptions {
        ratio: spec.ratio,
        replacement: spec.replacement,
    };
    let mut pm = nn_match(
        &refs,
        &cands,
        distance,
        |a, b| sets.share(a, b) && caliper.as_ref().is_none_or(|c| c.admits(a, b)),
        options,
    );

    // Without a caliper every reference unit must be matched; one whose strata
    // hold no opposite-group units falls back to the whole opposite group.
    if caliper.is_none() && options.replacement && pm.matched_refs.len() < refs.len() {
        let orphans: Vec<usize> = refs
            .iter()
            .copied()
            .filter(|r| pm.matched_refs.binary_search(r).is_err())
            .collect();
        let rescue = nn_match(&orphans, &cands, distance, |_, _| true, options);
        pm.links
            .retain(|l| pm.matched_refs.binary_search(&l.reference).is_ok());
        pm.links.extend(rescue.links);
        pm.links.sort_by(|a, b| {
            a.reference
                .cmp(&b.reference)
                .then(a.distance.total_cmp(&b.distance))
                .then(a.matched.cmp(&b.matched))
        });
        pm.matched_refs.extend(rescue.matched_refs);
        pm.matched_refs.sort_unstable();
    }
    Ok(pm)
}

/// Runs one matching algorithm on an already trimmed cohort with its refit GPS.
pub fn run_algorithm(
    cohort: &Cohort,
    gps: &GpsMatrix,
    spec: &AlgorithmSpec,
    reference: usize,
    config: &MatchConfig,
) -> Result<MatchedSet> {
    if gps.n() != cohort.n() || gps.z() != cohort.z() {
        return Err(Error::Dimension(format!(
            "GPS is {}x{}, cohort has {} units in {} groups",
            gps.n(),
            gps.z(),
            cohort.n(),
            cohort.z()
        )));
    }
    if reference >= cohort.z() {
        return Err(Error::InvalidArgument(format!(
            "reference group {reference} outside 0..{}",
            cohort.z()
        )));
    }
    let logits = logit_gps(gps);
    let eligible_refs = cohort.members(reference).len();

    let mut pairs = Vec::with_capacity(cohort.z() - 1);
    for other in (0..cohort.z()).filter(|&w| w != reference) {
        pairs.push((
            other,
            match_pair(cohort, &logits, spec, reference, other, config)?,
        ));
    }

    let mut retained: Vec<usize> = cohort.members(reference);
    for (_, pm) in &pairs {
        retained.retain(|r| pm.matched_refs.binary_search(r).is_ok());
    }

    let mut psi = vec![0u32; cohort.n()];
    for &r in &retained {
        psi[r] = 1;
    }
    let pair_links: Vec<(usize, Vec<Link>)> = pairs
        .into_iter()
        .map(|(other, pm)| {
            let kept: Vec<Link> = pm
                .links
                .into_iter()
                .filter(|l| retained.binary_search(&l.reference).is_ok())
                .collect();
            for l in &kept {
                psi[l.matched] += 1;
            }
            (other, kept)
        })
        .collect();

    let mut warnings = Vec::new();
    if retained.is_empty() {
        warnings.push(format!(
            "{}: no reference unit was matched in every group",
            spec.algorithm
        ));
    }
    Ok(MatchedSet {
        algorithm: Some(spec.algorithm),
        reference,
        n_wm: group_totals(cohort, &psi),
        retained_refs: retained,
        psi,
        eligible_refs,
        pair_links,
        warnings,
    })
}

/// Settings echoed into the matched-set manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportManifest {
    pub algorithm: String,
    pub config: MatchConfig,
}

/// Writes `id,treatment,psi` for every unit with positive weight.
pub fn export_matched<W: Write>(ms: &MatchedSet, cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "treatment", "psi"])?;
    for i in (0..cohort.n()).filter(|&i| ms.psi[i] > 0) {
        w.write_record([
            cohort.unit_ids()[i].as_str(),
            cohort.label(cohort.treatment(i)),
            &ms.psi[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<matched output>", e))?;
    Ok(())
}

/// Flat `key=value` manifest accompanying an exported matched set.
pub fn write_manifest<W: Write>(
    ms: &MatchedSet,
    cohort: &Cohort,
    config: &MatchConfig,
    mut out: W,
) -> Result<()> {
    let algorithm = ms.algorithm.map(|a| a.label()).unwrap_or("none");
    let text = format!(
        "algorithm={}\nreference={}\nseed={}\nclusters={}\nfuzzy_m={}\nepsilon={}\nretained_refs={}\neligible_refs={}\n",
        algorithm,
        cohort.label(ms.reference),
        config.seed,
        config.clusters,
        config.fuzzy_m,
        config.epsilon,
        ms.retained_refs.len(),
        ms.eligible_refs,
    );
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<manifest output>", e))
}

/// Parses a `key=value` block into `(line, key, value)`; blank lines and `#`
/// comments are skipped.
pub fn read_key_values<R: BufRead>(input: R) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<key=value input>", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Manifest {
            line: n + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        out.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Reads `id,treatment,psi` rows back into weights over `cohort`.
pub fn import_matched<R: std::io::Read>(
    input: R,
    cohort: &Cohort,
    reference: usize,
    eligible_refs: usize,
) -> Result<MatchedSet> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let id_col = header
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| Error::MissingColumn("id".into()))?;
    let psi_col = header
        .iter()
        .position(|h| h == "psi")
        .ok_or_else(|| Error::MissingColumn("psi".into()))?;
    let index: std::collections::HashMap<&str, usize> = cohort
        .unit_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut psi = vec![0u32; cohort.n()];
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_col).unwrap_or("").trim();
        let &i = index
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("matched unit `{id}` not in cohort")))?;
        let text = rec.get(psi_col).unwrap_or("").trim();
        psi[i] = text.parse().map_err(|_| Error::NonNumeric {
            row: r + 1,
            column: "psi".into(),
            value: text.to_string(),
        })?;
    }
    MatchedSet::from_weights(cohort, reference, psi, eligible_refs)
}
