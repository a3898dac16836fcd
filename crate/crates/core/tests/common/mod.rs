//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use gpsmatch::data::Cohort;
use gpsmatch::gps::GpsMatrix;
use gpsmatch::matching::Link;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cohort with ids `u0..`, covariates `x1..` and labels `1..=z`.
pub fn cohort(x: DMatrix<f64>, groups: &[usize], z: usize, y: Option<Vec<f64>>) -> Cohort {
    let (n, p) = x.shape();
    Cohort::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        (1..=p).map(|j| format!("x{j}")).collect(),
        x,
        groups.to_vec(),
        (1..=z).map(|w| w.to_string()).collect(),
        y,
    )
    .unwrap()
}

/// Random cohort with group-dependent covariate shifts, every group of size
/// at least `min_group`.
pub fn random_cohort(
    seed: u64,
    n: usize,
    p: usize,
    z: usize,
    shift: f64,
    min_group: usize,
) -> Cohort {
    let mut r = rng(seed);
    let mut groups: Vec<usize> = (0..n).map(|i| i % z).collect();
    for g in groups.iter_mut().skip(z * min_group) {
        *g = r.random_range(0..z);
    }
    let x = DMatrix::from_fn(n, p, |i, j| {
        let e: f64 = r.sample(StandardNormal);
        e + if j % z == groups[i] { shift } else { 0.0 }
    });
    cohort(x, &groups, z, None)
}

/// Random GPS rows drawn from a softmax of Gaussian scores.
pub fn random_gps(seed: u64, n: usize, z: usize, spread: f64) -> GpsMatrix {
    let mut r = rng(seed);
    let probs = DMatrix::from_fn(n, z, |_, _| {
        let e: f64 = r.sample(StandardNormal);
        (spread * e).exp()
    });
    let mut probs = probs;
    for mut row in probs.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    GpsMatrix::from_probabilities(probs).unwrap()
}

/// Exhaustive nearest-neighbour matcher.
///
/// With replacement each reference repeatedly takes the admissible candidate
/// of smallest `(distance, index)` it has not taken yet. Without replacement
/// the globally smallest `(distance, ref, cand)` pair among those still open is
/// linked, again and again, until nothing is left.
pub fn brute_force_match(
    refs: &[usize],
    cands: &[usize],
    dist: &dyn Fn(usize, usize) -> f64,
    admissible: &dyn Fn(usize, usize) -> bool,
    ratio: usize,
    replacement: bool,
) -> (Vec<Link>, Vec<usize>) {
    let mut links = Vec::new();
    let mut matched = Vec::new();
    let mut refs = refs.to_vec();
    refs.sort_unstable();
    if replacement {
        for &r in &refs {
            let mut taken: Vec<usize> = Vec::new();
            for _ in 0..ratio {
                let mut best: Option<(f64, usize)> = None;
                for &c in cands {
                    if taken.contains(&c) || !admissible(r, c) {
                        continue;
                    }
                    let d = dist(r, c);
                    let better = match best {
                        None => true,
                        Some((bd, bc)) => d < bd || (d == bd && c < bc),
                    };
                    if better {
                        best = Some((d, c));
                    }
                }
                match best {
                    Some((_, c)) => taken.push(c),
                    None => break,
                }
            }
            if taken.len() == ratio {
                matched.push(r);
                links.extend(taken.iter().map(|&c| Link {
                    reference: r,
                    matched: c,
                    distance: dist(r, c),
                }));
            }
        }
        return (links, matched);
    }
    let mut count = vec![0usize; refs.iter().max().map_or(0, |m| m + 1)];
    let mut used: Vec<usize> = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for &r in &refs {
            if count[r] >= ratio {
                continue;
            }
            for &c in cands {
                if used.contains(&c) || !admissible(r, c) {
                    continue;
                }
                let d = dist(r, c);
                let better = match best {
                    None => true,
                    Some((bd, br, bc)) => (d, r, c) < (bd, br, bc),
                };
                if better {
                    best = Some((d, r, c));
                }
            }
        }
        let Some((d, r, c)) = best else { break };
        count[r] += 1;
        used.push(c);
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
    matched = refs
        .iter()
        .copied()
        .filter(|&r| count[r] == ratio)
        .collect();
    (links, matched)
}

/// Binary logistic regression by iteratively reweighted least squares, solved
/// with LU. Returns `[intercept, slopes…]` for the log-odds of group 1.
pub fn binary_logit(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let (n, p) = x.shape();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let mut beta = DVector::zeros(p + 1);
    for _ in 0..100 {
        let eta = &design * &beta;
        let mu: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let mut xtwx = DMatrix::zeros(p + 1, p + 1);
        let mut xtr = DVector::zeros(p + 1);
        for i in 0..n {
            let row = design.row(i);
            xtwx += w[i] * row.transpose() * row;
            xtr += (y[i] - mu[i]) * row.transpose();
        }
        let step = xtwx.lu().solve(&xtr).expect("non-singular information");
        beta += &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    beta
}

/// Fuzzy c-means by direct iteration of the membership and centre updates,
/// started from the given centres.
pub fn fcm_oracle(
    data: &DMatrix<f64>,
    mut centers: DMatrix<f64>,
    m: f64,
    iters: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = data.shape();
    let k = centers.nrows();
    let mut u = DMatrix::zeros(n, k);
    for _ in 0..iters {
        for i in 0..n {
            let dist: Vec<f64> = (0..k)
                .map(|c| (data.row(i) - centers.row(c)).norm())
                .collect();
            for c in 0..k {
                let s: f64 = dist
                    .iter()
                    .map(|dj| (dist[c] / dj).powf(2.0 / (m - 1.0)))
                    .sum();
                u[(i, c)] = 1.0 / s;
            }
        }
        for c in 0..k {
            let w: Vec<f64> = (0..n).map(|i| u[(i, c)].powf(m)).collect();
            let tot: f64 = w.iter().sum();
            for j in 0..d {
                centers[(c, j)] = (0..n).map(|i| w[i] * data[(i, j)]).sum::<f64>() / tot;
            }
        }
    }
    (u, centers)
}

/// Sample mean, covariance (n−1), skewness and kurtosis of column data.
pub fn moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (mean, m2 * n / (n - 1.0), m3 / m2.powf(1.5), m4 / (m2 * m2))
}

/// The fifteen-unit, three-group VM fixture.
///
/// GPS columns 1 and 2 sit at two well separated levels (about 0.1 and 0.4),
/// so K=2 strata on either column are the levels themselves. Column 0 is the
/// remainder. Units 0–4 are the reference group, 5–9 group 2, 10–14 group 3.
pub fn vm_fixture() -> (Cohort, GpsMatrix) {
    let p1 = [
        0.10, 0.10, 0.40, 0.42, 0.12, 0.11, 0.10, 0.41, 0.13, 0.43, 0.10, 0.11, 0.40, 0.40, 0.12,
    ];
    let p2 = [
        0.10, 0.40, 0.40, 0.10, 0.12, 0.10, 0.42, 0.41, 0.11, 0.40, 0.11, 0.40, 0.10, 0.43, 0.13,
    ];
    let probs = DMatrix::from_fn(15, 3, |i, j| match j {
        0 => 1.0 - p1[i] - p2[i],
        1 => p1[i],
        _ => p2[i],
    });
    let groups: Vec<usize> = (0..15).map(|i| i / 5).collect();
    let x = DMatrix::from_fn(15, 2, |i, j| {
        if j == 0 {
            i as f64
        } else {
            (i * i) as f64 / 10.0
        }
    });
    let y = (0..15).map(|i| (i % 4) as f64).collect();
    (
        cohort(x, &groups, 3, Some(y)),
        GpsMatrix::from_probabilities(probs).unwrap(),
    )
}
