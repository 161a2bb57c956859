//! Monte Carlo checks of weighted Rademacher complexity and of the weighted
//! generalization bound for bounded linear classes.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::train::stream_rng;

/// Exhaustive sign enumeration is used up to this many rows.
pub const EXHAUSTIVE_MAX_N: usize = 12;

const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearClassSpec {
    /// parameter norm bound
    pub b: f64,
    /// covariate norm bound
    pub x_bound: f64,
    pub d: usize,
}

impl LinearClassSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.x_bound > 0.0 && self.d > 0) {
            return Err(Error::invalid(format!("invalid linear class {self:?}")));
        }
        Ok(())
    }

    fn check_rows(&self, x: &Matrix<f64>, w: &[f64]) -> Result<()> {
        self.validate()?;
        if x.cols() != self.d || x.rows() != w.len() || w.is_empty() {
            return Err(Error::Shape {
                op: "rademacher inputs",
                lhs: x.shape(),
                rhs: (w.len(), self.d),
            });
        }
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
        let slack = self.x_bound * (1.0 + 1e-12);
        for i in 0..x.rows() {
            let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > slack {
                return Err(Error::Row {
                    row: i,
                    msg: format!("covariate norm {norm} exceeds bound {}", self.x_bound),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub estimate: f64,
    /// `(B X / N) sqrt(sum w^2)` on the realized sample
    pub bound: f64,
    /// Monte Carlo standard error of `estimate` (0 when enumerated)
    pub se: f64,
    pub draws: usize,
    pub exhaustive: bool,
}

/// `(B X / N) sqrt(sum w^2)`.
pub fn linear_bound_thm42(spec: &LinearClassSpec, w: &[f64]) -> f64 {
    let n = w.len() as f64;
    spec.b * spec.x_bound / n * w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `(B X / N) sqrt(N E[w^2])` for a population mean squared weight.
pub fn population_linear_bound(spec: &LinearClassSpec, mean_sq_weight: f64, n: usize) -> f64 {
    spec.b * spec.x_bound / n as f64 * (n as f64 * mean_sq_weight).sqrt()
}

fn signed_norm(x: &Matrix<f64>, w: &[f64], sign: impl Fn(usize) -> bool, acc: &mut [f64]) -> f64 {
    acc.iter_mut().for_each(|v| *v = 0.0);
    for (i, &wi) in w.iter().enumerate() {
        let s = if sign(i) { wi } else { -wi };
        for (a, &xv) in acc.iter_mut().zip(x.row(i)) {
            *a += s * xv;
        }
    }
    acc.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Weighted Rademacher complexity of `{x -> theta^T x : |theta| <= B}` on
/// the given sample, using the closed-form inner supremum
/// `(B/N) |sum sigma_n w_n x_n|`. Signs are enumerated exhaustively when
/// `N <= EXHAUSTIVE_MAX_N`, otherwise `draws` random sign vectors are used.
pub fn weighted_rademacher_linear(
    spec: &LinearClassSpec,
    x: &Matrix<f64>,
    w: &[f64],
    draws: usize,
    seed: u64,
) -> Result<BoundReport> {
    spec.check_rows(x, w)?;
    if w.len() <= EXHAUSTIVE_MAX_N {
        let n = w.len();
        let mut acc = vec![0.0; spec.d];
        let patterns = 1usize << n;
        let total: f64 = (0..patterns)
            .map(|p| signed_norm(x, w, |i| p >> i & 1 == 1, &mut acc))
            .sum();
        return Ok(BoundReport {
            estimate: spec.b / n as f64 * total / patterns as f64,
            bound: linear_bound_thm42(spec, w),
            se: 0.0,
            draws: patterns,
            exhaustive: true,
        });
    }
    weighted_rademacher_linear_mc(spec, x, w, draws, seed)
}

/// Monte Carlo estimate regardless of `N`.
pub fn weighted_rademacher_linear_mc(
    spec: &LinearClassSpec,
    x: &Matrix<f64>,
    w: &[f64],
    draws: usize,
    seed: u64,
) -> Result<BoundReport> {
    spec.check_rows(x, w)?;
    if draws < 2 {
        return Err(Error::invalid("need at least two sign draws"));
    }
    let chunks = draws.div_ceil(CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let mut acc = vec![0.0; spec.d];
            let mut signs = vec![false; w.len()];
            let count = CHUNK.min(draws - c * CHUNK);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                signs.iter_mut().for_each(|s| *s = rng.random::<bool>());
                let v = signed_norm(x, w, |i| signs[i], &mut acc);
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let m = draws as f64;
    let mean = s1 / m;
    let var = ((s2 - m * mean * mean) / (m - 1.0)).max(0.0);
    let scale = spec.b / w.len() as f64;
    Ok(BoundReport {
        estimate: scale * mean,
        bound: linear_bound_thm42(spec, w),
        se: scale * (var / m).sqrt(),
        draws,
        exhaustive: false,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// inverse propensity weights of the supplied propensity
    #[default]
    Propensity,
    /// `w = 1`, the unweighted case
    Unit,
}

/// Setup of the bound-coverage experiment for a 2-D linear model with
/// squared loss.
///
/// Covariates are uniform on the disk of radius `x_bound`; the propensity is
/// `clamp(sigmoid(2 x_0), mu_min, 1 - mu_min)`; outcomes are
/// `clamp(0.5 x_0 - 0.3 x_1 + 0.5 a x_1 + noise * e, -1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    pub n: usize,
    pub trials: usize,
    pub delta: f64,
    pub b: f64,
    pub x_bound: f64,
    pub mu_min: f64,
    pub noise: f64,
    /// radii x angles of the parameter grid (plus the origin)
    pub grid_radii: usize,
    pub grid_angles: usize,
    pub sigma_draws: usize,
    pub population_n: usize,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            n: 200,
            trials: 500,
            delta: 0.05,
            b: 1.0,
            x_bound: 1.0,
            mu_min: 0.1,
            noise: 0.3,
            grid_radii: 9,
            grid_angles: 22,
            sigma_draws: 500,
            population_n: 1_000_000,
            weighting: Weighting::Propensity,
            seed: 0,
        }
    }
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n > 0
            && self.trials > 0
            && self.delta > 0.0
            && self.delta < 1.0
            && self.b >= 0.0
            && self.x_bound > 0.0
            && self.mu_min > 0.0
            && self.mu_min < 0.5
            && self.noise >= 0.0
            && self.sigma_draws > 1
            && self.population_n > 0;
        if !ok {
            return Err(Error::invalid(format!("invalid coverage config {self:?}")));
        }
        Ok(())
    }

    /// Parameter grid inside the ball of radius `b`; the origin is always
    /// included, so `grid_radii = 0` gives the single point `theta = 0`.
    pub fn grid(&self) -> Vec<[f64; 2]> {
        let mut g = vec![[0.0, 0.0]];
        for r in 1..=self.grid_radii {
            let rad = self.b * r as f64 / self.grid_radii as f64;
            for k in 0..self.grid_angles {
                let t = std::f64::consts::TAU * k as f64 / self.grid_angles as f64;
                g.push([rad * t.cos(), rad * t.sin()]);
            }
        }
        g
    }

    /// Upper bound on the weighted instance loss `w (y - theta^T x)^2`.
    pub fn c_prime(&self) -> f64 {
        let w_max = match self.weighting {
            Weighting::Propensity => 1.0 / self.mu_min,
            Weighting::Unit => 1.0,
        };
        w_max * (1.0 + self.b * self.x_bound).powi(2)
    }

    /// McDiarmid term `(c'/2) sqrt(log(1/delta) / N)`.
    pub fn concentration_term(&self) -> f64 {
        self.c_prime() / 2.0 * ((1.0 / self.delta).ln() / self.n as f64).sqrt()
    }

    /// One draw of `(x, w, y)`.
    fn draw<R: Rng>(&self, rng: &mut R) -> ([f64; 2], f64, f64) {
        let r = self.x_bound * rng.random::<f64>().sqrt();
        let t = std::f64::consts::TAU * rng.random::<f64>();
        let x = [r * t.cos(), r * t.sin()];
        let mu = (1.0 / (1.0 + (-2.0 * x[0]).exp())).clamp(self.mu_min, 1.0 - self.mu_min);
        let a = rng.random::<f64>() < mu;
        let e: f64 = rng.sample(StandardNormal);
        let af = if a { 1.0 } else { 0.0 };
        let y = (0.5 * x[0] - 0.3 * x[1] + 0.5 * af * x[1] + self.noise * e).clamp(-1.0, 1.0);
        let w = match self.weighting {
            Weighting::Propensity => {
                if a {
                    1.0 / mu
                } else {
                    1.0 / (1.0 - mu)
                }
            }
            Weighting::Unit => 1.0,
        };
        (x, w, y)
    }
}

/// Weighted second moments `(sum s y^2, sum s y x, sum s x x^T)`; the
/// weighted squared loss of any `theta` is a quadratic in them.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    yy: f64,
    yx: [f64; 2],
    xx: [[f64; 2]; 2],
}

impl Moments {
    fn add(&mut self, s: f64, x: [f64; 2], y: f64) {
        self.yy += s * y * y;
        for i in 0..2 {
            self.yx[i] += s * y * x[i];
            for j in 0..2 {
                self.xx[i][j] += s * x[i] * x[j];
            }
        }
    }

    /// `sum s (y - theta^T x)^2`
    fn loss(&self, t: [f64; 2]) -> f64 {
        let lin = t[0] * self.yx[0] + t[1] * self.yx[1];
        let quad = t[0] * t[0] * self.xx[0][0] + 2.0 * t[0] * t[1] * self.xx[0][1] + t[1] * t[1] * self.xx[1][1];
        self.yy - 2.0 * lin + quad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// `sup_theta L(theta) - L_hat(theta)`
    pub gap: f64,
    /// empirical Rademacher complexity of the weighted loss class
    pub rademacher: f64,
    pub bound: f64,
    pub violated: bool,
    /// realized `(B X / N) sqrt(sum w^2)`
    pub linear_bound_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub trials: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    pub c_prime: f64,
    pub concentration_term: f64,
    pub grid_size: usize,
    pub mean_gap: f64,
    pub max_gap: f64,
    pub mean_bound: f64,
    pub mean_rademacher: f64,
    pub mean_linear_bound_sample: f64,
    /// `(B X / N) sqrt(N E[w^2])` with `E[w^2]` from the population sample
    pub linear_bound_population: f64,
    pub results: Vec<TrialResult>,
}

/// Resamples `trials` datasets and counts how often the sup-gap between
/// population and empirical weighted risk exceeds
/// `2 R_hat + (c'/2) sqrt(log(1/delta)/N)`.
pub fn generalization_gap_experiment(cfg: &CoverageConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let grid = cfg.grid();
    let c_prime = cfg.c_prime();

    // population risk from a large independent sample
    let chunks = cfg.population_n.div_ceil(65_536);
    let pop: Vec<(Moments, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(cfg.seed, 1_000_000 + c as u64);
            let mut m = Moments::default();
            let mut w2 = 0.0;
            for _ in 0..65_536.min(cfg.population_n - c * 65_536) {
                let (x, w, y) = cfg.draw(&mut rng);
                m.add(w, x, y);
                w2 += w * w;
            }
            (m, w2)
        })
        .collect();
    let mut pm = Moments::default();
    let mut pw2 = 0.0;
    for (m, w2) in &pop {
        pm.yy += m.yy;
        for i in 0..2 {
            pm.yx[i] += m.yx[i];
            for j in 0..2 {
                pm.xx[i][j] += m.xx[i][j];
            }
        }
        pw2 += w2;
    }
    let pn = cfg.population_n as f64;
    let pop_risk: Vec<f64> = grid.iter().map(|&t| pm.loss(t) / pn).collect();
    let lin_spec = LinearClassSpec {
        b: cfg.b,
        x_bound: cfg.x_bound,
        d: 2,
    };
    let linear_bound_population = population_linear_bound(&lin_spec, pw2 / pn, cfg.n);

    let conc = cfg.concentration_term();
    let results: Vec<TrialResult> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| -> Result<TrialResult> {
            let mut rng = stream_rng(cfg.seed, k as u64);
            let rows: Vec<([f64; 2], f64, f64)> = (0..cfg.n).map(|_| cfg.draw(&mut rng)).collect();
            let mut m = Moments::default();
            for &(x, w, y) in &rows {
                let loss_max = w
                    * (y - (cfg.b * cfg.x_bound))
                        .abs()
                        .max((y + cfg.b * cfg.x_bound).abs())
                        .powi(2);
                if loss_max > c_prime * (1.0 + 1e-12) {
                    return Err(Error::invalid(format!(
                        "instance loss {loss_max} exceeds c' = {c_prime}"
                    )));
                }
                m.add(w, x, y);
            }
            let n = cfg.n as f64;
            let gap = grid
                .iter()
                .zip(&pop_risk)
                .map(|(&t, &l)| l - m.loss(t) / n)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut rad = 0.0;
            for _ in 0..cfg.sigma_draws {
                let mut s = Moments::default();
                for &(x, w, y) in &rows {
                    let sign = if rng.random::<bool>() { w } else { -w };
                    s.add(sign, x, y);
                }
                rad += grid.iter().map(|&t| s.loss(t)).fold(f64::NEG_INFINITY, f64::max) / n;
            }
            let rademacher = rad / cfg.sigma_draws as f64;
            let bound = 2.0 * rademacher + conc;
            let w: Vec<f64> = rows.iter().map(|r| r.1).collect();
            Ok(TrialResult {
                gap,
                rademacher,
                bound,
                violated: gap > bound,
                linear_bound_sample: linear_bound_thm42(&lin_spec, &w),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let t = results.len() as f64;
    let violations = results.iter().filter(|r| r.violated).count();
    Ok(CoverageReport {
        trials: results.len(),
        violations,
        violation_fraction: violations as f64 / t,
        c_prime,
        concentration_term: conc,
        grid_size: grid.len(),
        mean_gap: results.iter().map(|r| r.gap).sum::<f64>() / t,
        max_gap: results.iter().map(|r| r.gap).fold(f64::NEG_INFINITY, f64::max),
        mean_bound: results.iter().map(|r| r.bound).sum::<f64>() / t,
        mean_rademacher: results.iter().map(|r| r.rademacher).sum::<f64>() / t,
        mean_linear_bound_sample: results.iter().map(|r| r.linear_bound_sample).sum::<f64>() / t,
        linear_bound_population,
        results,
    })
}

/// Random instance of a linear class for property checks: rows with norm
/// at most `x_bound` and weights in `[1, w_max]`.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, d: usize, x_bound: f64, w_max: f64) -> (Matrix<f64>, Vec<f64>) {
    let mut x = Matrix::zeros(n, d);
    for i in 0..n {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let r = x_bound * rng.random::<f64>();
        for (j, a) in v.iter().enumerate() {
            x.set(i, j, a / norm * r);
        }
    }
    let w = (0..n).map(|_| 1.0 + (w_max - 1.0) * rng.random::<f64>()).collect();
    (x, w)
}
