//! Monte-Carlo runner: configurations × replications × algorithms, balance
//! metrics per job, and median summaries by `(Z, P, b)`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::balance::{balance_report, reference_deltas, BalanceReport};
use crate::error::{Error, Result};
use crate::gps::trim_and_refit;
use crate::matching::{read_key_values, run_algorithm, Algorithm, MatchConfig, MatchedSet};
use crate::seeds::derive_seed;
use crate::simgen::{enumerate_grid, FactorLevels, GridKind, MeanPattern, SimConfig};

/// Pseudo-algorithm name for the pre-matched eligible cohort.
pub const PREMATCHED: &str = "pre";

/// A matching algorithm or the pre-matched baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    PreMatched,
    Match(Algorithm),
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::PreMatched => PREMATCHED,
            Method::Match(a) => a.label(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case(PREMATCHED) {
            Ok(Method::PreMatched)
        } else {
            Ok(Method::Match(s.parse()?))
        }
    }

    /// The baseline followed by all twelve algorithms.
    pub fn all() -> Vec<Method> {
        std::iter::once(Method::PreMatched)
            .chain(Algorithm::ALL.into_iter().map(Method::Match))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub configs: Vec<SimConfig>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    pub clusters: usize,
    pub fuzzy_m: f64,
    pub epsilon: f64,
    /// Zero-based reference group.
    pub reference: usize,
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// The pinned desk-scale sub-grid: Z=3, P=5, n1=600, γ=1, λ=0, σ²=1, η=0,
/// df=∞ and b ∈ {0, 0.5, 1}.
pub fn desk_levels() -> FactorLevels {
    FactorLevels {
        z: vec![3],
        n1: vec![600],
        gamma: vec![1],
        b: vec![0.0, 0.5, 1.0],
        lambda: vec![0.0],
        sigma2_sq: vec![1.0],
        sigma3_sq: vec![1.0],
        eta: vec![0.0],
        df: vec![None],
        p: vec![5],
    }
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            configs: desk_levels().cross(),
            methods: Method::all(),
            replications: 20,
            seed: 1,
            clusters: 5,
            fuzzy_m: 2.0,
            epsilon: 0.5,
            reference: 0,
            out: None,
            threads: None,
        }
    }
}

fn list<T, F>(value: &str, line: usize, parse: F) -> Result<Vec<T>>
where
    F: Fn(&str) -> Option<T>,
{
    value
        .split(',')
        .map(|v| {
            parse(v.trim()).ok_or_else(|| Error::Manifest {
                line,
                message: format!("cannot parse `{}`", v.trim()),
            })
        })
        .collect()
}

fn parse_df(v: &str) -> Option<Option<f64>> {
    if v.eq_ignore_ascii_case("inf") || v == "∞" {
        Some(None)
    } else {
        v.parse::<f64>().ok().filter(|d| *d > 0.0).map(Some)
    }
}

impl RunManifest {
    /// Parses a flat `key=value` manifest. Factor keys take comma-separated levels
    /// that are crossed; `grid = z35` or `grid = z10` selects a published grid
    /// instead.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest::default();
        let mut levels = desk_levels();
        let mut grid: Option<GridKind> = None;
        let mut pattern = MeanPattern::Recycle;
        let pairs = read_key_values(text.as_bytes())?;
        for (line, key, value) in &pairs {
            let line = *line;
            let bad = |message: String| Error::Manifest { line, message };
            match key.as_str() {
                "grid" => {
                    grid = match value.to_ascii_lowercase().as_str() {
                        "custom" | "desk" => None,
                        other => Some(other.parse().map_err(|e: Error| bad(e.to_string()))?),
                    }
                }
                "z" => levels.z = list(value, line, |v| v.parse().ok())?,
                "n1" => levels.n1 = list(value, line, |v| v.parse().ok())?,
                "gamma" => levels.gamma = list(value, line, |v| v.parse().ok())?,
                "b" => levels.b = list(value, line, |v| v.parse().ok())?,
                "lambda" => levels.lambda = list(value, line, |v| v.parse().ok())?,
                "s2" => levels.sigma2_sq = list(value, line, |v| v.parse().ok())?,
                "s3" => levels.sigma3_sq = list(value, line, |v| v.parse().ok())?,
                "eta" => levels.eta = list(value, line, |v| v.parse().ok())?,
                "df" => levels.df = list(value, line, parse_df)?,
                "p" => levels.p = list(value, line, |v| v.parse().ok())?,
                "mean_pattern" => pattern = value.parse().map_err(|e: Error| bad(e.to_string()))?,
                "algorithms" => {
                    m.methods = if value.eq_ignore_ascii_case("all") {
                        Method::all()
                    } else {
                        list(value, line, |v| Method::parse(v).ok())?
                    }
                }
                "replications" => {
                    m.replications = value
                        .parse()
                        .map_err(|_| bad(format!("bad count `{value}`")))?
                }
                "seed" => {
                    m.seed = value
                        .parse()
                        .map_err(|_| bad(format!("bad seed `{value}`")))?
                }
                "clusters" => {
                    m.clusters = value.parse().map_err(|_| bad(format!("bad K `{value}`")))?
                }
                "fuzzy_m" => {
                    m.fuzzy_m = value.parse().map_err(|_| bad(format!("bad m `{value}`")))?
                }
                "epsilon" => {
                    m.epsilon = value
                        .parse()
                        .map_err(|_| bad(format!("bad epsilon `{value}`")))?
                }
                "reference" => {
                    let r: usize = value
                        .parse()
                        .map_err(|_| bad(format!("bad reference `{value}`")))?;
                    if r == 0 {
                        return Err(bad("reference is 1-based".into()));
                    }
                    m.reference = r - 1;
                }
                "out" => m.out = Some(PathBuf::from(value)),
                "threads" => {
                    m.threads = Some(
                        value
                            .parse()
                            .map_err(|_| bad(format!("bad threads `{value}`")))?,
                    )
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        m.configs = match grid {
            Some(kind) => enumerate_grid(kind).configs,
            None => levels.cross(),
        };
        for c in &mut m.configs {
            c.mean_pattern = pattern;
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: &str| Error::Manifest {
            line: 0,
            message: message.to_string(),
        };
        if self.replications == 0 {
            return Err(bad("replications must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(bad("no algorithms selected"));
        }
        if self.configs.is_empty() {
            return Err(bad("no configurations selected"));
        }
        if self.clusters == 0 {
            return Err(bad("clusters must be at least 1"));
        }
        if self.fuzzy_m.is_nan() || self.fuzzy_m <= 1.0 {
            return Err(bad("fuzzy_m must exceed 1"));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(bad("epsilon must be non-negative"));
        }
        for c in &self.configs {
            c.validate()?;
            if self.reference >= c.z {
                return Err(bad("reference group exceeds Z"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    /// No reference unit was matched in every pair.
    Empty,
    Error(String),
}

impl Status {
    pub fn as_string(&self) -> String {
        match self {
            Status::Ok => "ok".into(),
            Status::Empty => "empty".into(),
            Status::Error(e) => format!("error: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub config_index: usize,
    pub config: SimConfig,
    pub method: Method,
    pub replication: usize,
    pub status: Status,
    pub maxmax2sb: f64,
    pub meanmax2sb: f64,
    pub prop_matched: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub z: usize,
    pub p: usize,
    pub b: f64,
    pub method: Method,
    pub median_maxmax2sb: f64,
    pub median_meanmax2sb: f64,
    pub median_prop_matched: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub raw: Vec<RawRecord>,
    pub summary: Vec<SummaryRow>,
}

fn record(
    config_index: usize,
    config: &SimConfig,
    method: Method,
    replication: usize,
    outcome: Result<Option<BalanceReport>>,
) -> RawRecord {
    let (status, report) = match outcome {
        Ok(Some(r)) => (Status::Ok, Some(r)),
        Ok(None) => (Status::Empty, None),
        Err(e) => (Status::Error(e.to_string()), None),
    };
    RawRecord {
        config_index,
        config: *config,
        method,
        replication,
        status,
        maxmax2sb: report.as_ref().map_or(f64::NAN, |r| r.maxmax2sb),
        meanmax2sb: report.as_ref().map_or(f64::NAN, |r| r.meanmax2sb),
        prop_matched: report.as_ref().map_or(f64::NAN, |r| r.prop_matched),
    }
}

/// Balance of one method on a sampled cohort.
fn evaluate(
    trimmed: &crate::gps::TrimmedCohort,
    deltas: &[f64],
    method: Method,
    manifest: &RunManifest,
    seed: u64,
) -> Result<Option<BalanceReport>> {
    let ms = match method {
        Method::PreMatched => MatchedSet::unmatched(&trimmed.cohort, manifest.reference),
        Method::Match(alg) => {
            let cfg = MatchConfig {
                clusters: manifest.clusters,
                fuzzy_m: manifest.fuzzy_m,
                epsilon: manifest.epsilon,
                seed,
            };
            run_algorithm(
                &trimmed.cohort,
                &trimmed.gps,
                &alg.spec(),
                manifest.reference,
                &cfg,
            )?
        }
    };
    if ms.is_empty() {
        return Ok(None);
    }
    balance_report(&trimmed.cohort, &ms, deltas).map(Some)
}

/// One replication of one configuration: a row per method.
pub fn run_job(manifest: &RunManifest, config_index: usize, replication: usize) -> Vec<RawRecord> {
    let config = &manifest.configs[config_index];
    let seed = derive_seed(manifest.seed, &[config_index as u64, replication as u64]);
    let prepared = sample_cohort_and_trim(config, manifest.reference, seed);
    manifest
        .methods
        .iter()
        .map(|&method| {
            let outcome = match &prepared {
                Ok((trimmed, deltas)) => {
                    let method_seed = derive_seed(seed, &[method_code(method)]);
                    evaluate(trimmed, deltas, method, manifest, method_seed)
                }
                Err(e) => Err(Error::InvalidArgument(e.to_string())),
            };
            record(config_index, config, method, replication, outcome)
        })
        .collect()
}

fn method_code(method: Method) -> u64 {
    match method {
        Method::PreMatched => 0,
        Method::Match(a) => 1 + Algorithm::ALL.iter().position(|&x| x == a).expect("listed") as u64,
    }
}

type Prepared = (crate::gps::TrimmedCohort, Vec<f64>);

fn sample_cohort_and_trim(config: &SimConfig, reference: usize, seed: u64) -> Result<Prepared> {
    let full = crate::simgen::sample_cohort(config, seed)?;
    let trimmed = trim_and_refit(&full)?;
    let deltas = reference_deltas(&full, reference)?;
    Ok((trimmed, deltas))
}

/// Runs every job and summarizes. Output order is fixed by
/// (configuration, replication, method) whatever the thread count.
pub fn run_simulation(manifest: &RunManifest) -> Result<SimulationOutput> {
    manifest.validate()?;
    let jobs: Vec<(usize, usize)> = (0..manifest.configs.len())
        .flat_map(|c| (0..manifest.replications).map(move |r| (c, r)))
        .collect();
    let execute = || -> Vec<RawRecord> {
        jobs.par_iter()
            .map(|&(c, r)| run_job(manifest, c, r))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let raw = match manifest.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(execute),
        None => execute(),
    };
    let summary = summarize(&raw);
    Ok(SimulationOutput { raw, summary })
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Medians of the successful replications, marginalizing every factor except
/// `Z`, `P` and `b`.
pub fn summarize(raw: &[RawRecord]) -> Vec<SummaryRow> {
    #[derive(Default)]
    struct Acc {
        maxmax: Vec<f64>,
        mean: Vec<f64>,
        prop: Vec<f64>,
        failed: usize,
    }
    let mut cells: BTreeMap<(usize, usize, u64, Method), Acc> = BTreeMap::new();
    for r in raw {
        // b is non-negative, so its bit pattern orders like the value
        let key = (r.config.z, r.config.p, r.config.b.to_bits(), r.method);
        let acc = cells.entry(key).or_default();
        if r.status == Status::Ok {
            acc.maxmax.push(r.maxmax2sb);
            acc.mean.push(r.meanmax2sb);
            acc.prop.push(r.prop_matched);
        } else {
            acc.failed += 1;
        }
    }
    cells
        .into_iter()
        .map(|((z, p, b, method), mut acc)| SummaryRow {
            z,
            p,
            b: f64::from_bits(b),
            method,
            median_maxmax2sb: median(&mut acc.maxmax),
            median_meanmax2sb: median(&mut acc.mean),
            median_prop_matched: median(&mut acc.prop),
            n_ok: acc.maxmax.len(),
            n_failed: acc.failed,
        })
        .collect()
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub const RAW_HEADER: [&str; 16] = [
    "z",
    "n1",
    "gamma",
    "b",
    "lambda",
    "s2",
    "s3",
    "eta",
    "df",
    "p",
    "algorithm",
    "replication",
    "status",
    "maxmax2sb",
    "meanmax2sb",
    "prop_matched",
];

pub fn write_raw<W: Write>(raw: &[RawRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RAW_HEADER)?;
    for r in raw {
        let c = &r.config;
        w.write_record([
            c.z.to_string(),
            c.n1.to_string(),
            c.gamma.to_string(),
            c.b.to_string(),
            c.lambda.to_string(),
            c.sigma2_sq.to_string(),
            c.sigma3_sq.to_string(),
            c.eta.to_string(),
            c.df_label(),
            c.p.to_string(),
            r.method.label().to_string(),
            r.replication.to_string(),
            r.status.as_string(),
            num(r.maxmax2sb),
            num(r.meanmax2sb),
            num(r.prop_matched),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<raw output>", e))?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "z",
    "p",
    "b",
    "algorithm",
    "median_maxmax2sb",
    "median_meanmax2sb",
    "median_prop_matched",
    "n_ok",
];

pub fn write_summary<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summary {
        w.write_record([
            s.z.to_string(),
            s.p.to_string(),
            s.b.to_string(),
            s.method.label().to_string(),
            num(s.median_maxmax2sb),
            num(s.median_meanmax2sb),
            num(s.median_prop_matched),
            s.n_ok.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary output>", e))?;
    Ok(())
}

/// Tidy long format: one row per (cell, metric).
pub fn write_summary_long<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "z",
        "p",
        "b",
        "algorithm",
        "metric",
        "median",
        "n_ok",
        "n_failed",
    ])?;
    for s in summary {
        for (metric, v) in [
            ("maxmax2sb", s.median_maxmax2sb),
            ("meanmax2sb", s.median_meanmax2sb),
            ("prop_matched", s.median_prop_matched),
        ] {
            w.write_record([
                s.z.to_string(),
                s.p.to_string(),
                s.b.to_string(),
                s.method.label().to_string(),
                metric.to_string(),
                num(v),
                s.n_ok.to_string(),
                s.n_failed.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<summary output>", e))?;
    Ok(())
}

/// Writes `raw.csv`, `summary.csv` and `summary_long.csv` into `dir`.
pub fn write_outputs(output: &SimulationOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let path = dir.join(name);
        File::create(&path).map_err(|e| Error::io(path, e))
    };
    write_raw(&output.raw, create("raw.csv")?)?;
    write_summary(&output.summary, create("summary.csv")?)?;
    write_summary_long(&output.summary, create("summary_long.csv")?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let mut text = String::new();
    std::io::Read::read_to_string(
        &mut BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?),
        &mut text,
    )
    .map_err(|e| Error::io(path, e))?;
    RunManifest::parse(&text)
}
