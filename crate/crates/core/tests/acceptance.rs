//! Acceptance criteria, one line each.
//!
//! Runs as a plain binary so every verdict is printed even when all pass. Exits
//! non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{brute_force_match, moments, random_cohort, rng};
use gpsmatch::balance::{balance_report, reference_deltas};
use gpsmatch::clustering::{fuzzy_cmeans, kmeans};
use gpsmatch::distance::{
    estimate_covariance, pairwise_distances, CovarianceEstimate, DistanceSpec, Metric,
};
use gpsmatch::gps::{fit_gps, logit_gps, predict_gps, trim_and_refit};
use gpsmatch::harness::{
    run_simulation, write_raw, Method, RawRecord, RunManifest, SimulationOutput, Status,
};
use gpsmatch::matching::{nn_match, run_algorithm, Algorithm, Caliper, MatchConfig, MatchOptions};
use gpsmatch::simgen::{enumerate_grid, sample_cohort, GridKind, SimConfig};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Desk {
    z3: SimulationOutput,
    z3_time: Duration,
    z5: SimulationOutput,
    z5_time: Duration,
}

fn desk() -> Desk {
    let start = Instant::now();
    let z3 =
        run_simulation(&RunManifest::parse("seed=1\nreplications=20\nalgorithms=all\n").unwrap())
            .unwrap();
    let z3_time = start.elapsed();
    let start = Instant::now();
    let z5 = run_simulation(
        &RunManifest::parse("seed=1\nreplications=20\nalgorithms=all\nz=5\nb=0.5\n").unwrap(),
    )
    .unwrap();
    let z5_time = start.elapsed();
    Desk {
        z3,
        z3_time,
        z5,
        z5_time,
    }
}

fn cell(out: &SimulationOutput, b: f64, method: Method) -> &gpsmatch::harness::SummaryRow {
    out.summary
        .iter()
        .find(|r| r.b == b && r.method == method)
        .expect("summary cell")
}

fn matchers() -> impl Iterator<Item = Algorithm> {
    Algorithm::ALL.into_iter()
}

fn grid_counts() -> Verdict {
    let start = Instant::now();
    let z35 = enumerate_grid(GridKind::Z35).configs.len();
    let z10 = enumerate_grid(GridKind::Z10).configs.len();
    let t = start.elapsed();
    ensure(z35 == 10_368 && z10 == 36, format!("z35={z35} z10={z10}"))?;
    ensure(t < Duration::from_secs(1), format!("took {t:?}"))?;
    Ok(format!("z35={z35} z10={z10} in {:.3}s", t.as_secs_f64()))
}

fn table3_trend(d: &Desk) -> Verdict {
    let mut inversions = Vec::new();
    for a in matchers() {
        let m = Method::Match(a);
        let v: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&b| cell(&d.z3, b, m).median_maxmax2sb)
            .collect();
        ensure(v[0] < 0.15, format!("{a} b=0 median {:.3}", v[0]))?;
        for w in v.windows(2) {
            if w[1] < w[0] {
                inversions.push((a, w[0] - w[1]));
            }
        }
    }
    ensure(
        inversions.len() <= 1 && inversions.iter().all(|(_, drop)| *drop <= 0.02),
        format!("inversions {inversions:?}"),
    )?;
    ensure(
        d.z3_time < Duration::from_secs(600),
        format!("took {:?}", d.z3_time),
    )?;
    let worst = matchers()
        .map(|a| cell(&d.z3, 0.0, Method::Match(a)).median_maxmax2sb)
        .fold(0.0, f64::max);
    Ok(format!(
        "non-decreasing in b, {} inversions, b=0 max median {worst:.3}, {:.0}s",
        inversions.len(),
        d.z3_time.as_secs_f64()
    ))
}

fn table4_separation(d: &Desk) -> Verdict {
    let vm = cell(&d.z5, 0.5, Method::Match(Algorithm::Vm)).median_maxmax2sb;
    let gps = cell(&d.z5, 0.5, Method::Match(Algorithm::GpsNc)).median_maxmax2sb;
    ensure(vm > 0.35, format!("VM {vm:.3}"))?;
    ensure(gps < 0.25, format!("GPSnc {gps:.3}"))?;
    ensure(vm - gps > 0.15, format!("gap {:.3}", vm - gps))?;
    ensure(
        d.z5_time < Duration::from_secs(900),
        format!("took {:?}", d.z5_time),
    )?;
    Ok(format!(
        "VM {vm:.3}, GPSnc {gps:.3}, gap {:.3}, {:.0}s",
        vm - gps,
        d.z5_time.as_secs_f64()
    ))
}

fn no_caliper_keeps_all(d: &Desk) -> Verdict {
    let nc = [
        Algorithm::VmNc,
        Algorithm::KmNc,
        Algorithm::FmNc,
        Algorithm::GpsNc,
        Algorithm::CovNc,
    ];
    let rows: Vec<&RawRecord> =
        d.z3.raw
            .iter()
            .chain(&d.z5.raw)
            .filter(|r| matches!(r.method, Method::Match(a) if nc.contains(&a)))
            .collect();
    for r in &rows {
        ensure(
            r.status == Status::Ok && r.prop_matched == 1.0,
            format!(
                "{} rep {}: {:?} {}",
                r.method.label(),
                r.replication,
                r.status,
                r.prop_matched
            ),
        )?;
    }
    Ok(format!("{} replications, all Prop.Matched = 1", rows.len()))
}

fn vm_retention(d: &Desk) -> Verdict {
    let mut detail = Vec::new();
    for b in [0.0, 0.5, 1.0] {
        let vm = cell(&d.z3, b, Method::Match(Algorithm::Vm)).median_prop_matched;
        let nr = cell(&d.z3, b, Method::Match(Algorithm::VmNr)).median_prop_matched;
        ensure(
            vm > 0.9 && nr < vm,
            format!("b={b}: VM {vm:.3} VMnr {nr:.3}"),
        )?;
        detail.push(format!("b={b}: {vm:.3}/{nr:.3}"));
    }
    Ok(format!("VM/VMnr {}", detail.join(", ")))
}

fn matcher_oracle() -> Verdict {
    let start = Instant::now();
    let mut comparisons = 0;
    for seed in 0..200u64 {
        let c = random_cohort(seed, rng(seed).random_range(9..=40), 2, 3, 0.5, 3);
        let mut r = rng(seed ^ 0x5EED);
        let coarse = r.random_bool(0.5);
        let feats = DMatrix::from_fn(c.n(), 2, |_, _| {
            let v: f64 = r.random_range(-2.0..2.0);
            if coarse {
                (v * 4.0).round() / 4.0
            } else {
                v
            }
        });
        let caliper = Caliper::from_columns(feats.clone(), 0.5).unwrap();
        let dist = |a: usize, b: usize| (feats.row(a) - feats.row(b)).norm();
        let refs = c.members(0);
        for other in 1..3 {
            let cands = c.members(other);
            for replacement in [true, false] {
                for ratio in 1..=2 {
                    for with_caliper in [false, true] {
                        let admit = |a: usize, b: usize| !with_caliper || caliper.admits(a, b);
                        let pm = nn_match(
                            &refs,
                            &cands,
                            dist,
                            admit,
                            MatchOptions { ratio, replacement },
                        );
                        let (links, matched) =
                            brute_force_match(&refs, &cands, &dist, &admit, ratio, replacement);
                        ensure(
                            pm.links == links && pm.matched_refs == matched,
                            format!("seed {seed} pair {other} repl={replacement} ratio={ratio} caliper={with_caliper}"),
                        )?;
                        comparisons += 1;
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(30), format!("took {t:?}"))?;
    Ok(format!(
        "200 instances, {comparisons} configurations identical, {:.2}s",
        t.as_secs_f64()
    ))
}

fn properties() -> Verdict {
    let mut checks = 0usize;
    for seed in 0..30u64 {
        let z = 3 + (seed as usize % 3);
        let c = random_cohort(seed, 30 * z, 3, z, 0.8, 4);

        let model = fit_gps(&c).map_err(|e| e.to_string())?;
        let g = predict_gps(&model, &c).unwrap();
        for row in g.probs().row_iter() {
            ensure(
                (row.sum() - 1.0).abs() <= 1e-10,
                format!("seed {seed}: GPS row sum"),
            )?;
        }
        for w in model.log_likelihood_trace.windows(2) {
            ensure(
                w[1] >= w[0] - 1e-12 * w[0].abs(),
                format!("seed {seed}: log-likelihood fell"),
            )?;
        }

        let x = c.covariates();
        let km = kmeans(x, 3, seed).unwrap();
        for w in km.inertia_trace.windows(2) {
            ensure(
                w[1] <= w[0] * (1.0 + 1e-12),
                format!("seed {seed}: inertia rose"),
            )?;
        }
        let fc = fuzzy_cmeans(x, 3, 2.0, seed).unwrap();
        for w in fc.objective_trace.windows(2) {
            ensure(
                w[1] <= w[0] * (1.0 + 1e-10),
                format!("seed {seed}: J_m rose"),
            )?;
        }

        let mut r = rng(seed);
        let a = DMatrix::from_fn(3, 3, |_, _| r.sample::<f64, _>(StandardNormal))
            + DMatrix::identity(3, 3) * 3.0;
        let y = x * a.transpose();
        let spec = DistanceSpec::new(Metric::Mahalanobis, vec![0, 1, 2]).unwrap();
        let dx = pairwise_distances(x, x, &spec, Some(&estimate_covariance(x).unwrap())).unwrap();
        let dy =
            pairwise_distances(&y, &y, &spec, Some(&estimate_covariance(&y).unwrap())).unwrap();
        ensure(
            (dx - dy).amax() < 1e-6,
            format!("seed {seed}: Mahalanobis affine invariance"),
        )?;
        let id = CovarianceEstimate::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let m = pairwise_distances(x, x, &spec, Some(&id)).unwrap();
        let e = pairwise_distances(
            x,
            x,
            &DistanceSpec::new(Metric::Euclidean, vec![0, 1, 2]).unwrap(),
            None,
        )
        .unwrap();
        ensure(
            (m - e).amax() < 1e-9,
            format!("seed {seed}: identity Mahalanobis"),
        )?;

        let t = trim_and_refit(&c).map_err(|e| e.to_string())?;
        let deltas = reference_deltas(&c, 0).unwrap();
        let logits = logit_gps(&t.gps);
        let cfg = MatchConfig {
            seed,
            ..MatchConfig::default()
        };
        for alg in Algorithm::ALL {
            let spec = alg.spec();
            let ms = run_algorithm(&t.cohort, &t.gps, &spec, 0, &cfg).map_err(|e| e.to_string())?;
            ensure(
                ms == run_algorithm(&t.cohort, &t.gps, &spec, 0, &cfg).unwrap(),
                format!("{alg}: rerun differs"),
            )?;
            for (other, links) in &ms.pair_links {
                if spec.caliper {
                    let cols: Vec<usize> = match spec.features {
                        gpsmatch::matching::Features::ReferenceLogit => vec![0],
                        gpsmatch::matching::Features::PairLogits => vec![0, *other],
                        _ => (0..z).collect(),
                    };
                    let cal =
                        Caliper::from_columns(logits.select_columns(cols.iter()), cfg.epsilon)
                            .unwrap();
                    ensure(
                        links.iter().all(|l| cal.admits(l.reference, l.matched)),
                        format!("{alg}: caliper"),
                    )?;
                }
                if !spec.replacement {
                    let mut used: Vec<usize> = links.iter().map(|l| l.matched).collect();
                    used.sort_unstable();
                    let n = used.len();
                    used.dedup();
                    ensure(n == used.len(), format!("{alg}: candidate reused"))?;
                }
            }
            if ms.is_empty() {
                continue;
            }
            let rep = balance_report(&t.cohort, &ms, &deltas).unwrap();
            for p in 0..c.p() {
                for j in 0..z {
                    for k in 0..z {
                        for l in 0..z {
                            ensure(
                                (rep.sb(p, j, k) + rep.sb(p, k, l) - rep.sb(p, j, l)).abs()
                                    <= 1e-12,
                                format!("{alg}: SB additivity"),
                            )?;
                        }
                    }
                }
            }
            checks += 1;
        }
    }
    let small = |threads| {
        let mut m =
            RunManifest::parse("n1=60\nb=0.5\nreplications=2\nalgorithms=all\nseed=3\n").unwrap();
        m.threads = Some(threads);
        let mut buf = Vec::new();
        write_raw(&run_simulation(&m).unwrap().raw, &mut buf).unwrap();
        buf
    };
    ensure(
        small(1) == small(1) && small(1) == small(3),
        "simulation reruns differ",
    )?;
    Ok(format!(
        "30 cohorts, {checks} matched sets, byte-identical reruns"
    ))
}

fn generator() -> Verdict {
    let cfg = SimConfig {
        n1: 10_000,
        p: 3,
        ..SimConfig::default()
    };
    let c = sample_cohort(&cfg, 8).unwrap();
    let rows = c.members(0);
    let x = c.covariates().select_rows(rows.iter());
    let n = rows.len() as f64;
    for p in 0..3 {
        let col: Vec<f64> = x.column(p).iter().copied().collect();
        let (mean, _, skew, _) = moments(&col);
        ensure(
            mean.abs() < 4.0 / n.sqrt(),
            format!("x{} mean {mean:.4}", p + 1),
        )?;
        ensure(skew.abs() < 0.1, format!("x{} skewness {skew:.4}", p + 1))?;
    }
    let cov = estimate_covariance(&x).unwrap().matrix;
    ensure(
        (cov - DMatrix::identity(3, 3)).amax() < 0.1,
        "covariance away from identity",
    )?;

    let mut combos = 0;
    for z in [3usize, 5, 10] {
        for gamma in [1usize, 2] {
            for n1 in [600usize, 900, 1200] {
                let sizes = SimConfig {
                    z,
                    gamma,
                    n1,
                    ..SimConfig::default()
                }
                .group_sizes();
                let expected: Vec<usize> = (0..z)
                    .map(|w| n1 * gamma.pow([0, 1, 2, 1, 2][w % 5]))
                    .collect();
                ensure(
                    sizes == expected,
                    format!("Z={z} γ={gamma} n1={n1}: {sizes:?}"),
                )?;
                combos += 1;
            }
        }
    }
    Ok(format!(
        "n=10000 moments within bounds, {combos} size combinations exact"
    ))
}

fn balance_improves(d: &Desk) -> Verdict {
    let improved: Vec<Algorithm> = matchers()
        .filter(|&a| {
            [0.5, 1.0].iter().all(|&b| {
                cell(&d.z3, b, Method::Match(a)).median_maxmax2sb
                    < cell(&d.z3, b, Method::PreMatched).median_maxmax2sb
            })
        })
        .collect();
    ensure(
        improved.len() >= 10,
        format!("only {} of 12 improve", improved.len()),
    )?;
    Ok(format!(
        "{} of 12 algorithms below pre-matched at b=0.5 and b=1",
        improved.len()
    ))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, verdict: Verdict| {
        let (tag, text) = match verdict {
            Ok(t) => ("PASS", t),
            Err(t) => {
                failed += 1;
                ("FAIL", t)
            }
        };
        println!("[{tag}] {id}. {name}: {text}");
    };
    report(1, "grid counts", grid_counts());
    let d = desk();
    report(2, "Z=3 trend in b", table3_trend(&d));
    report(3, "Z=5 VM vs GPSnc separation", table4_separation(&d));
    report(4, "no-caliper Prop.Matched", no_caliper_keeps_all(&d));
    report(5, "VM retention", vm_retention(&d));
    report(6, "matcher oracle", matcher_oracle());
    report(7, "property suites", properties());
    report(8, "generator moments", generator());
    report(9, "balance improvement", balance_improves(&d));
    if failed == 0 {
        println!("acceptance: all 9 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria fail");
        ExitCode::FAILURE
    }
}
