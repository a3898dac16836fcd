//! Synthetic cohorts from multivariate skew-t group distributions, and the
//! factorial grid of simulation configurations.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::data::Cohort;
use crate::error::{Error, Result};

/// How the scalar offset `b` is laid out over the covariates of each group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanPattern {
    /// Covariate `p` (1-based) of group `w` has mean `b` iff `((p - 1) mod Z) + 1 = w`.
    #[default]
    Recycle,
    /// Group 1 has mean `b` on every covariate, the other groups 0.
    Block,
}

impl std::str::FromStr for MeanPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "recycle" => Ok(MeanPattern::Recycle),
            "block" => Ok(MeanPattern::Block),
            other => Err(Error::InvalidArgument(format!(
                "unknown mean pattern `{other}`"
            ))),
        }
    }
}

/// One cell of the simulation design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub z: usize,
    pub n1: usize,
    pub gamma: usize,
    pub b: f64,
    pub lambda: f64,
    pub sigma2_sq: f64,
    pub sigma3_sq: f64,
    pub eta: f64,
    /// Degrees of freedom; `None` is the skew-normal limit.
    pub df: Option<f64>,
    pub p: usize,
    pub mean_pattern: MeanPattern,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            z: 3,
            n1: 600,
            gamma: 1,
            b: 0.0,
            lambda: 0.0,
            sigma2_sq: 1.0,
            sigma3_sq: 1.0,
            eta: 0.0,
            df: None,
            p: 5,
            mean_pattern: MeanPattern::Recycle,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if ![3, 5, 10].contains(&self.z) {
            return Err(Error::InvalidArgument(format!(
                "Z must be 3, 5 or 10, got {}",
                self.z
            )));
        }
        if self.n1 < 2 || self.gamma == 0 || self.p == 0 {
            return Err(Error::InvalidArgument(
                "n1 must be >= 2, gamma >= 1 and P >= 1".into(),
            ));
        }
        if self.df.is_some_and(|d| d.is_nan() || d <= 0.0) {
            return Err(Error::InvalidArgument("df must be positive".into()));
        }
        if !(self.sigma2_sq > 0.0 && self.sigma3_sq > 0.0) {
            return Err(Error::InvalidArgument(
                "variance multipliers must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Ten-group designs use identity covariance and no skew.
    fn effective(&self) -> SimConfig {
        let mut c = *self;
        if c.z == 10 {
            c.lambda = 0.0;
            c.sigma2_sq = 1.0;
            c.sigma3_sq = 1.0;
            c.eta = 0.0;
        }
        c
    }

    /// `n_w`: `n2 = γ n1`, `n3 = γ² n1`, `n4 = n2`, `n5 = n3`, `n_{i+5} = n_i`.
    pub fn group_sizes(&self) -> Vec<usize> {
        let base = [
            self.n1,
            self.gamma * self.n1,
            self.gamma * self.gamma * self.n1,
            self.gamma * self.n1,
            self.gamma * self.gamma * self.n1,
        ];
        (0..self.z).map(|w| base[w % 5]).collect()
    }

    pub fn mean_vector(&self, group: usize) -> DVector<f64> {
        DVector::from_fn(self.p, |p, _| {
            let on = match self.mean_pattern {
                MeanPattern::Recycle => p % self.z == group,
                MeanPattern::Block => group == 0,
            };
            if on {
                self.b
            } else {
                0.0
            }
        })
    }

    pub fn covariance(&self, group: usize) -> DMatrix<f64> {
        let c = self.effective();
        let diag = [1.0, c.sigma2_sq, c.sigma3_sq, c.sigma2_sq, c.sigma3_sq][group % 5];
        DMatrix::from_fn(c.p, c.p, |i, j| if i == j { diag } else { c.lambda })
    }

    pub fn df_label(&self) -> String {
        match self.df {
            Some(d) => format!("{d}"),
            None => "inf".into(),
        }
    }
}

impl fmt::Display for SimConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            self.z,
            self.n1,
            self.gamma,
            self.b,
            self.lambda,
            self.sigma2_sq,
            self.sigma3_sq,
            self.eta,
            self.df_label(),
            self.p
        )
    }
}

pub const CONFIG_HEADER: &str = "z,n1,gamma,b,lambda,s2,s3,eta,df,p";

/// Draws from `Skew-t_df(μ, Σ, η·1)` by the skew-normal over `sqrt(χ²_df / df)`
/// construction. The skew-normal part uses `δ|U₀| + L·U` with `LLᵀ = Ω̄ − δδᵀ`.
#[derive(Debug, Clone)]
pub struct SkewT {
    location: DVector<f64>,
    scales: DVector<f64>,
    delta: DVector<f64>,
    factor: DMatrix<f64>,
    chi: Option<(ChiSquared<f64>, f64)>,
}

impl SkewT {
    /// `None` when `scale` is not positive definite.
    pub fn new(
        location: DVector<f64>,
        scale: DMatrix<f64>,
        slant: f64,
        df: Option<f64>,
    ) -> Option<Self> {
        let d = location.len();
        Cholesky::new(scale.clone())?;
        let scales = DVector::from_fn(d, |i, _| scale[(i, i)].sqrt());
        let corr = DMatrix::from_fn(d, d, |i, j| scale[(i, j)] / (scales[i] * scales[j]));
        let alpha = DVector::from_element(d, slant);
        let quad = (alpha.transpose() * &corr * &alpha)[(0, 0)];
        let delta = &corr * &alpha / (1.0 + quad).sqrt();
        let factor = Cholesky::new(&corr - &delta * delta.transpose())?.l();
        let chi = match df {
            Some(v) => Some((ChiSquared::new(v).ok()?, v)),
            None => None,
        };
        Some(Self {
            location,
            scales,
            delta,
            factor,
            chi,
        })
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let d = self.dim();
        let u0: f64 = StandardNormal.sample(rng);
        let u = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let mut zv = &self.factor * u;
        zv.axpy(u0.abs(), &self.delta, 1.0);
        let mix = match &self.chi {
            Some((chi, v)) => (chi.sample(rng) / v).sqrt().recip(),
            None => 1.0,
        };
        for i in 0..d {
            out[i] = self.location[i] + self.scales[i] * zv[i] * mix;
        }
    }
}

/// A cohort drawn from `cfg`. Group `w` uses its own ChaCha stream of `seed`.
pub fn sample_cohort(cfg: &SimConfig, seed: u64) -> Result<Cohort> {
    cfg.validate()?;
    let eff = cfg.effective();
    let sizes = cfg.group_sizes();
    let n: usize = sizes.iter().sum();
    let mut values = vec![0.0; n * cfg.p];
    let mut treatments = Vec::with_capacity(n);
    let mut row = 0;
    for (w, &size) in sizes.iter().enumerate() {
        let dist = SkewT::new(cfg.mean_vector(w), cfg.covariance(w), eff.eta, cfg.df)
            .ok_or(Error::NotPositiveDefinite { group: w + 1 })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(w as u64);
        for _ in 0..size {
            dist.sample_into(&mut rng, &mut values[row * cfg.p..(row + 1) * cfg.p]);
            treatments.push(w);
            row += 1;
        }
    }
    Cohort::new(
        (1..=n).map(|i| format!("u{i}")).collect(),
        (1..=cfg.p).map(|j| format!("x{j}")).collect(),
        DMatrix::from_row_slice(n, cfg.p, &values),
        treatments,
        (1..=cfg.z).map(|w| w.to_string()).collect(),
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Three- and five-group design.
    Z35,
    /// Ten-group design.
    Z10,
}

impl std::str::FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "z35" => Ok(GridKind::Z35),
            "z10" => Ok(GridKind::Z10),
            other => Err(Error::InvalidArgument(format!("unknown grid `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigGrid {
    pub configs: Vec<SimConfig>,
    pub excluded: Vec<(SimConfig, &'static str)>,
}

/// Factor levels of one design, crossed in the listed order.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorLevels {
    pub z: Vec<usize>,
    pub n1: Vec<usize>,
    pub gamma: Vec<usize>,
    pub b: Vec<f64>,
    pub lambda: Vec<f64>,
    pub sigma2_sq: Vec<f64>,
    pub sigma3_sq: Vec<f64>,
    pub eta: Vec<f64>,
    pub df: Vec<Option<f64>>,
    pub p: Vec<usize>,
}

impl FactorLevels {
    pub fn z35() -> Self {
        Self {
            z: vec![3, 5],
            n1: vec![600, 1200],
            gamma: vec![1, 2],
            b: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            lambda: vec![0.0, 0.25],
            sigma2_sq: vec![0.5, 1.0, 2.0],
            sigma3_sq: vec![0.5, 1.0, 2.0],
            eta: vec![-3.5, 0.0, 3.5],
            df: vec![Some(7.0), None],
            p: vec![5, 10, 20],
        }
    }

    pub fn z10() -> Self {
        Self {
            z: vec![10],
            n1: vec![900],
            gamma: vec![1, 2],
            b: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            lambda: vec![0.0],
            sigma2_sq: vec![1.0],
            sigma3_sq: vec![1.0],
            eta: vec![0.0],
            df: vec![Some(7.0), None],
            p: vec![10, 20],
        }
    }

    /// Number of cells before exclusions.
    pub fn cells(&self) -> usize {
        self.z.len()
            * self.n1.len()
            * self.gamma.len()
            * self.b.len()
            * self.lambda.len()
            * self.sigma2_sq.len()
            * self.sigma3_sq.len()
            * self.eta.len()
            * self.df.len()
            * self.p.len()
    }

    /// Full cross product in lexicographic factor order.
    pub fn cross(&self) -> Vec<SimConfig> {
        let mut out = Vec::with_capacity(self.cells());
        for &z in &self.z {
            for &n1 in &self.n1 {
                for &gamma in &self.gamma {
                    for &b in &self.b {
                        for &lambda in &self.lambda {
                            for &sigma2_sq in &self.sigma2_sq {
                                for &sigma3_sq in &self.sigma3_sq {
                                    for &eta in &self.eta {
                                        for &df in &self.df {
                                            for &p in &self.p {
                                                out.push(SimConfig {
                                                    z,
                                                    n1,
                                                    gamma,
                                                    b,
                                                    lambda,
                                                    sigma2_sq,
                                                    sigma3_sq,
                                                    eta,
                                                    df,
                                                    p,
                                                    mean_pattern: MeanPattern::Recycle,
                                                });
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn exclusion(cfg: &SimConfig) -> Option<&'static str> {
    if cfg.p == 20 && cfg.n1 == 600 && cfg.z != 10 {
        Some("P=20 with n1=600")
    } else if cfg.p == 20 && cfg.b == 1.0 {
        Some("P=20 with b=1")
    } else {
        None
    }
}

/// The published design grid with its exclusions applied.
pub fn enumerate_grid(which: GridKind) -> ConfigGrid {
    let levels = match which {
        GridKind::Z35 => FactorLevels::z35(),
        GridKind::Z10 => FactorLevels::z10(),
    };
    let mut configs = Vec::new();
    let mut excluded = Vec::new();
    for cfg in levels.cross() {
        match exclusion(&cfg) {
            Some(reason) => excluded.push((cfg, reason)),
            None => configs.push(cfg),
        }
    }
    ConfigGrid { configs, excluded }
}
