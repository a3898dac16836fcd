//! k-means and fuzzy c-means over rows of a feature matrix, plus the 1/K
//! membership threshold that turns fuzzy memberships into overlapping sets.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;
pub const FUZZY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct HardClustering {
    /// Zero-based cluster of each row.
    pub assignment: Vec<usize>,
    pub centers: DMatrix<f64>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the kept restart.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl HardClustering {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyClustering {
    pub membership: DMatrix<f64>,
    pub centers: DMatrix<f64>,
    /// `J_m` at the returned memberships and centers.
    pub objective: f64,
    pub m: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl FuzzyClustering {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }
}

/// Cluster membership lists, possibly overlapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSets {
    /// Units in each cluster, ascending.
    pub members: Vec<Vec<usize>>,
    /// Clusters of each unit, ascending.
    pub unit_clusters: Vec<Vec<usize>>,
}

impl ClusterSets {
    /// Sets from a hard partition.
    pub fn from_assignment(assignment: &[usize], k: usize) -> Self {
        let mut members = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        Self {
            members,
            unit_clusters: assignment.iter().map(|&c| vec![c]).collect(),
        }
    }

    /// A single stratum holding all `n` units.
    pub fn single(n: usize) -> Self {
        Self::from_assignment(&vec![0; n], 1)
    }

    /// Whether units `a` and `b` belong to at least one common cluster.
    pub fn share(&self, a: usize, b: usize) -> bool {
        let (x, y) = (&self.unit_clusters[a], &self.unit_clusters[b]);
        let (mut i, mut j) = (0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        false
    }
}

fn sq_dist(data: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, k: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..data.ncols() {
        let d = data[(i, c)] - centers[(k, c)];
        s += d * d;
    }
    s
}

fn check_shape(data: &DMatrix<f64>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "number of clusters must be at least 1".into(),
        ));
    }
    if data.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "clustering needs at least one column".into(),
        ));
    }
    if k > data.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{k} clusters requested for {} points",
            data.nrows()
        )));
    }
    Ok(())
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
fn kmeans_plus_plus(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = data.nrows();
    let mut centers = DMatrix::zeros(k, data.ncols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&data.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(data, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&data.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data, i, &centers, c));
        }
    }
    centers
}

/// Nearest center for every row; ties go to the lowest cluster index.
fn assign_nearest(data: &DMatrix<f64>, centers: &DMatrix<f64>) -> Vec<usize> {
    (0..data.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..centers.nrows() {
                let d = sq_dist(data, i, centers, k);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn inertia_of(data: &DMatrix<f64>, assignment: &[usize], centers: &DMatrix<f64>) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &k)| sq_dist(data, i, centers, k))
        .sum()
}

/// Moves the point farthest from its own center into each empty cluster.
fn repair_empty(data: &DMatrix<f64>, assignment: &mut [usize], centers: &mut DMatrix<f64>) {
    let k = centers.nrows();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &a) in assignment.iter().enumerate() {
            if counts[a] > 1 {
                let d = sq_dist(data, i, centers, a);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        let i = far.expect("k <= n leaves a cluster with two points");
        assignment[i] = empty;
        centers.row_mut(empty).copy_from(&data.row(i));
    }
}

fn update_centers(data: &DMatrix<f64>, assignment: &[usize], k: usize) -> DMatrix<f64> {
    let mut centers = DMatrix::zeros(k, data.ncols());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for c in 0..data.ncols() {
            centers[(a, c)] += data[(i, c)];
        }
    }
    for (a, &count) in counts.iter().enumerate() {
        if count > 0 {
            centers.row_mut(a).scale_mut(1.0 / count as f64);
        }
    }
    centers
}

fn lloyd(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> HardClustering {
    let mut centers = kmeans_plus_plus(data, k, rng);
    let mut assignment = assign_nearest(data, &centers);
    let mut trace = vec![inertia_of(data, &assignment, &centers)];
    let mut iterations = 0;
    loop {
        iterations += 1;
        repair_empty(data, &mut assignment, &mut centers);
        centers = update_centers(data, &assignment, k);
        let next = assign_nearest(data, &centers);
        trace.push(inertia_of(data, &next, &centers));
        let stable = next == assignment;
        assignment = next;
        if stable || iterations >= MAX_ITERATIONS {
            break;
        }
    }
    let mut inertia = *trace.last().expect("trace is non-empty");
    if assignment
        .iter()
        .collect::<std::collections::HashSet<_>>()
        .len()
        < k
    {
        repair_empty(data, &mut assignment, &mut centers);
        centers = update_centers(data, &assignment, k);
        inertia = inertia_of(data, &assignment, &centers);
        trace.push(inertia);
    }
    HardClustering {
        assignment,
        centers,
        inertia,
        inertia_trace: trace,
        iterations,
    }
}

/// Lloyd's algorithm with k-means++ starts; the best of ten restarts is kept,
/// ties going to the earliest restart.
pub fn kmeans(data: &DMatrix<f64>, k: usize, seed: u64) -> Result<HardClustering> {
    check_shape(data, k)?;
    let mut best: Option<HardClustering> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let run = lloyd(data, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fuzzy_memberships(data: &DMatrix<f64>, centers: &DMatrix<f64>, m: f64) -> DMatrix<f64> {
    let n = data.nrows();
    let k = centers.nrows();
    let power = 1.0 / (m - 1.0);
    let mut u = DMatrix::zeros(n, k);
    let mut d2 = vec![0.0; k];
    for i in 0..n {
        for (c, d) in d2.iter_mut().enumerate() {
            *d = sq_dist(data, i, centers, c);
        }
        if let Some(hit) = d2.iter().position(|&d| d == 0.0) {
            u[(i, hit)] = 1.0;
            continue;
        }
        let dmin = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        let ratios: Vec<f64> = d2.iter().map(|&d| (dmin / d).powf(power)).collect();
        let total: f64 = ratios.iter().sum();
        for c in 0..k {
            u[(i, c)] = ratios[c] / total;
        }
    }
    u
}

fn fuzzy_centers(data: &DMatrix<f64>, u: &DMatrix<f64>, m: f64) -> DMatrix<f64> {
    let k = u.ncols();
    let mut centers = DMatrix::zeros(k, data.ncols());
    for c in 0..k {
        let mut wsum = 0.0;
        for i in 0..data.nrows() {
            let w = u[(i, c)].powf(m);
            wsum += w;
            for j in 0..data.ncols() {
                centers[(c, j)] += w * data[(i, j)];
            }
        }
        if wsum > 0.0 {
            centers.row_mut(c).scale_mut(1.0 / wsum);
        }
    }
    centers
}

/// `J_m(U, v) = Σ_i Σ_k u_ik^m ||x_i − v_k||²`.
pub fn fuzzy_objective(
    data: &DMatrix<f64>,
    u: &DMatrix<f64>,
    centers: &DMatrix<f64>,
    m: f64,
) -> f64 {
    let mut j = 0.0;
    for i in 0..data.nrows() {
        for c in 0..centers.nrows() {
            j += u[(i, c)].powf(m) * sq_dist(data, i, centers, c);
        }
    }
    j
}

/// Fuzzy c-means by alternating center and membership updates, started from
/// k-means++ centers. Stops when no membership moves by more than `1e-6`.
pub fn fuzzy_cmeans(data: &DMatrix<f64>, k: usize, m: f64, seed: u64) -> Result<FuzzyClustering> {
    check_shape(data, k)?;
    if !m.is_finite() || m <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fuzzy exponent must be finite and > 1, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(data, k, &mut rng);
    let mut u = fuzzy_memberships(data, &centers, m);
    let mut trace = vec![fuzzy_objective(data, &u, &centers, m)];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        centers = fuzzy_centers(data, &u, m);
        let next = fuzzy_memberships(data, &centers, m);
        trace.push(fuzzy_objective(data, &next, &centers, m));
        let change = (&next - &u).amax();
        u = next;
        if change < FUZZY_TOLERANCE {
            break;
        }
    }
    Ok(FuzzyClustering {
        objective: *trace.last().expect("non-empty"),
        membership: u,
        centers,
        m,
        objective_trace: trace,
        iterations,
    })
}

/// A unit joins every cluster whose membership is at least `1/K`.
///
/// Comparison allows `1e-12` of rounding slack so a row of exact `1/K` entries
/// joins every cluster.
pub fn threshold_assign(fuzzy: &FuzzyClustering) -> ClusterSets {
    threshold_memberships(&fuzzy.membership)
}

pub fn threshold_memberships(membership: &DMatrix<f64>) -> ClusterSets {
    let (n, k) = membership.shape();
    let cut = 1.0 / k as f64 - 1e-12;
    let mut members = vec![Vec::new(); k];
    let mut unit_clusters = vec![Vec::new(); n];
    for i in 0..n {
        for c in 0..k {
            if membership[(i, c)] >= cut {
                members[c].push(i);
                unit_clusters[i].push(c);
            }
        }
    }
    ClusterSets {
        members,
        unit_clusters,
    }
}
