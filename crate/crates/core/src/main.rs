use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpsmatch::balance::{balance_report, reference_deltas, write_balance};
use gpsmatch::data::{load_cohort, Cohort, ColumnMapping};
use gpsmatch::estimation::{estimate_att, write_estimates};
use gpsmatch::gps::trim_and_refit;
use gpsmatch::harness::{load_manifest, run_simulation, write_outputs};
use gpsmatch::matching::{
    export_matched, import_matched, read_key_values, run_algorithm, write_manifest, Algorithm,
    MatchConfig, MatchedSet,
};
use gpsmatch::simgen::{enumerate_grid, GridKind, CONFIG_HEADER};
use gpsmatch::Error;

#[derive(Parser)]
#[command(
    name = "gpsmatch",
    version,
    about = "Generalized propensity score matching for multiple treatments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match a cohort and write the matched set, its balance and ATT estimates.
    Match(MatchArgs),
    /// Balance report of a cohort, optionally weighted by an exported matched set.
    Balance(BalanceArgs),
    /// Run a Monte-Carlo manifest and write raw and summary tables.
    Simulate(SimulateArgs),
    /// Enumerate a published configuration grid.
    Grid(GridArgs),
}

#[derive(Args)]
struct Columns {
    /// Treatment column.
    #[arg(long, default_value = "treatment")]
    treatment_col: String,
    /// Unit id column (default: `id` when present, else row numbers).
    #[arg(long)]
    id_col: Option<String>,
    /// Outcome column (default: `y` when present).
    #[arg(long)]
    outcome_col: Option<String>,
    /// Comma-separated covariate columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

#[derive(Args)]
struct MatchArgs {
    /// Cohort CSV.
    cohort: PathBuf,
    #[arg(long)]
    algorithm: Algorithm,
    /// Reference group label, or `auto` for the largest group.
    #[arg(long, default_value = "auto")]
    reference: String,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    clusters: u64,
    #[arg(long, default_value_t = 2.0)]
    fuzzy_m: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    columns: Columns,
}

#[derive(Args)]
struct BalanceArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Matched set written by `match`; requires `--manifest`.
    #[arg(long, requires = "manifest")]
    matched: Option<PathBuf>,
    #[arg(long, requires = "matched")]
    manifest: Option<PathBuf>,
    /// Reference group label, or `auto`; ignored when a manifest is given.
    #[arg(long, default_value = "auto")]
    reference: String,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    columns: Columns,
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat key=value manifest.
    manifest: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    replications: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides the manifest).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value = "z35")]
    which: GridKind,
    /// Print only the number of configurations.
    #[arg(long)]
    count: bool,
}

enum Failure {
    Usage(String),
    Job(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Job(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Match(a) => cmd_match(a),
        Command::Balance(a) => cmd_balance(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Grid(a) => cmd_grid(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Job(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn read_cohort_file(path: &Path, cols: &Columns) -> Result<Cohort, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let header: Vec<String> = csv::Reader::from_reader(file)
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut mapping = ColumnMapping::infer(&header);
    mapping.treatment = cols.treatment_col.clone();
    if cols.id_col.is_some() {
        mapping.id = cols.id_col.clone();
    }
    if cols.outcome_col.is_some() {
        mapping.outcome = cols.outcome_col.clone();
    }
    mapping.covariates = cols.covariates.clone();
    load_cohort(path, &mapping)
}

fn resolve_reference(cohort: &Cohort, label: &str) -> Result<usize, Failure> {
    if label.eq_ignore_ascii_case("auto") {
        return Ok(cohort.largest_group());
    }
    cohort
        .group_of_label(label)
        .ok_or_else(|| Failure::Usage(format!("no treatment group labelled `{label}`")))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn cmd_match(a: MatchArgs) -> Result<(), Failure> {
    if a.epsilon.is_nan() || a.epsilon < 0.0 {
        return Err(Failure::Usage("--epsilon must be non-negative".into()));
    }
    if a.fuzzy_m.is_nan() || a.fuzzy_m <= 1.0 {
        return Err(Failure::Usage("--fuzzy-m must exceed 1".into()));
    }
    let full = read_cohort_file(&a.cohort, &a.columns)?;
    let reference = resolve_reference(&full, &a.reference)?;
    let trimmed = trim_and_refit(&full)?;
    for w in trimmed
        .initial_model
        .warnings
        .iter()
        .chain(&trimmed.model.warnings)
    {
        eprintln!("warning: {w}");
    }
    let config = MatchConfig {
        clusters: a.clusters as usize,
        fuzzy_m: a.fuzzy_m,
        epsilon: a.epsilon,
        seed: a.seed,
    };
    let cohort = &trimmed.cohort;
    let matched = run_algorithm(
        cohort,
        &trimmed.gps,
        &a.algorithm.spec(),
        reference,
        &config,
    )?;
    for w in &matched.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    export_matched(&matched, cohort, create(&a.out.join("matched.csv"))?)?;
    write_manifest(
        &matched,
        cohort,
        &config,
        create(&a.out.join("matched_manifest.txt"))?,
    )?;
    if matched.is_empty() {
        return Err(Error::EmptyMatchedGroup(cohort.label(reference).to_string()).into());
    }
    let deltas = reference_deltas(&full, reference)?;
    let report = balance_report(cohort, &matched, &deltas)?;
    write_balance(&report, cohort, create(&a.out.join("balance.csv"))?)?;
    if cohort.outcomes().is_some() {
        let est = estimate_att(cohort, &matched)?;
        write_estimates(&est, cohort, create(&a.out.join("estimates.csv"))?)?;
    }
    Ok(())
}

fn cmd_balance(a: BalanceArgs) -> Result<(), Failure> {
    let cohort = read_cohort_file(&a.cohort, &a.columns)?;
    let matched = match (&a.matched, &a.manifest) {
        (Some(mpath), Some(fpath)) => {
            let file = File::open(fpath).map_err(|e| Error::io(fpath, e))?;
            let kv = read_key_values(BufReader::new(file))?;
            let get = |key: &str| {
                kv.iter()
                    .find(|(_, k, _)| k == key)
                    .map(|(_, _, v)| v.clone())
                    .ok_or_else(|| Error::Manifest {
                        line: 0,
                        message: format!("missing `{key}`"),
                    })
            };
            let reference = resolve_reference(&cohort, &get("reference")?)?;
            let eligible: usize = get("eligible_refs")?.parse().map_err(|_| Error::Manifest {
                line: 0,
                message: "bad `eligible_refs`".into(),
            })?;
            let file = File::open(mpath).map_err(|e| Error::io(mpath, e))?;
            import_matched(file, &cohort, reference, eligible)?
        }
        _ => {
            let reference = resolve_reference(&cohort, &a.reference)?;
            MatchedSet::unmatched(&cohort, reference)
        }
    };
    let deltas = reference_deltas(&cohort, matched.reference)?;
    let report = balance_report(&cohort, &matched, &deltas)?;
    match &a.out {
        Some(path) => write_balance(&report, &cohort, create(path)?)?,
        None => write_balance(&report, &cohort, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut manifest = load_manifest(&a.manifest).map_err(|e| match e {
        Error::Manifest { .. } => Failure::Usage(e.to_string()),
        other => Failure::Job(other),
    })?;
    if let Some(r) = a.replications {
        manifest.replications = r as usize;
    }
    if let Some(s) = a.seed {
        manifest.seed = s;
    }
    if a.threads.is_some() {
        manifest.threads = a.threads;
    }
    let out = a
        .out
        .or_else(|| manifest.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let output = run_simulation(&manifest)?;
    write_outputs(&output, &out)?;
    let failed = output
        .raw
        .iter()
        .filter(|r| r.status != gpsmatch::harness::Status::Ok)
        .count();
    eprintln!(
        "{} rows, {} summary cells, {} failed replications -> {}",
        output.raw.len(),
        output.summary.len(),
        failed,
        out.display()
    );
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<(), Failure> {
    let grid = enumerate_grid(a.which);
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let io_err = |e| Error::io("<stdout>", e);
    if a.count {
        writeln!(out, "{}", grid.configs.len()).map_err(io_err)?;
    } else {
        writeln!(out, "{CONFIG_HEADER}").map_err(io_err)?;
        for c in &grid.configs {
            writeln!(out, "{c}").map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)?;
    Ok(())
}
