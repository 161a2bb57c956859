//! Synthetic benchmark with decomposed covariates.
//!
//! Covariates are standard normal. The first `d_c` columns are confounders,
//! the next `d_o` only drive the outcomes, the next `d_t` only drive the
//! effect, and the rest are inert:
//!
//! ```text
//! E[Y0|x] = sum(x_c^2) + sum(x_o^2)
//! tau(x)  = sum(x_t^2)
//! E[Y1|x] = E[Y0|x] + tau(x)
//! mu(x)   = sigmoid(xi_sel * (sum(x_c^2) / d_c - omega))
//! ```
//!
//! `omega` is the sample median of `sum(x_c^2) / d_c`, so the median
//! propensity of a generated sample is exactly 0.5.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tape::sigmoid;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    /// `y = ybar + eps`, `eps ~ N(0, 1)`
    #[serde(rename = "an")]
    Additive,
    /// `y = ybar * (1 + eps)`, `eps ~ N(0, xi^2)`
    #[serde(rename = "mn")]
    Multiplicative,
}

impl NoiseKind {
    pub fn tag(self) -> &'static str {
        match self {
            NoiseKind::Additive => "an",
            NoiseKind::Multiplicative => "mn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub d_c: usize,
    pub d_o: usize,
    pub d_t: usize,
    pub d: usize,
    /// selection strength
    pub xi_sel: f64,
    pub noise: NoiseKind,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            d_c: 5,
            d_o: 5,
            d_t: 5,
            d: 25,
            xi_sel: 3.0,
            noise: NoiseKind::Additive,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_c == 0 {
            return Err(Error::invalid("d_c must be at least 1"));
        }
        if self.d < self.d_c + self.d_o + self.d_t {
            return Err(Error::invalid(format!(
                "d={} smaller than d_c+d_o+d_t={}",
                self.d,
                self.d_c + self.d_o + self.d_t
            )));
        }
        if !(self.xi_sel > 0.0 && self.xi_sel.is_finite()) {
            return Err(Error::invalid("selection strength must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

const STREAM_COVARIATES: u64 = 1;
const STREAM_ASSIGNMENT: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Noiseless quantities for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface<T> {
    pub mu: T,
    pub ey0: T,
    pub ey1: T,
    pub tau: T,
}

/// Per-row ground truth of a generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracle<T> {
    pub mu: Vec<T>,
    pub ey0: Vec<T>,
    pub ey1: Vec<T>,
    pub tau: Vec<T>,
    pub y0: Vec<T>,
    pub y1: Vec<T>,
    /// calibrated selection offset
    pub omega: T,
    /// multiplicative noise scale (`None` for additive noise)
    pub noise_scale: Option<T>,
}

pub fn sample_covariates<T: Scalar>(cfg: &SyntheticConfig, n: usize) -> Result<Matrix<T>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut rng = cfg.rng(STREAM_COVARIATES);
    Ok(Matrix::from_fn(n, cfg.d, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        T::lit(z)
    }))
}

fn sum_sq<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum()
}

/// `sum(x_c^2) / d_c` for one row.
pub fn selection_score<T: Scalar>(cfg: &SyntheticConfig, row: &[T]) -> T {
    sum_sq(&row[..cfg.d_c]) / T::from_usize(cfg.d_c).unwrap()
}

/// Sample median (mean of the two middle values for even sizes).
pub fn median<T: Scalar>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty sample"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / T::lit(2.0)
    })
}

/// Median of the selection score over `sample`.
pub fn calibrate_omega<T: Scalar>(cfg: &SyntheticConfig, sample: &Matrix<T>) -> Result<T> {
    cfg.validate()?;
    if sample.rows() == 0 {
        return Err(Error::invalid("cannot calibrate on an empty sample"));
    }
    check_dims(cfg, sample)?;
    let scores: Vec<T> = (0..sample.rows())
        .map(|i| selection_score(cfg, sample.row(i)))
        .collect();
    median(&scores)
}

fn check_dims<T: Scalar>(cfg: &SyntheticConfig, x: &Matrix<T>) -> Result<()> {
    if x.cols() != cfg.d {
        return Err(Error::Shape {
            op: "synthetic covariates",
            lhs: x.shape(),
            rhs: (x.rows(), cfg.d),
        });
    }
    Ok(())
}

/// Noiseless surfaces for every row of `x`. `omega` must come from
/// [`calibrate_omega`].
pub fn true_surfaces<T: Scalar>(cfg: &SyntheticConfig, x: &Matrix<T>, omega: Option<T>) -> Result<Vec<Surface<T>>> {
    cfg.validate()?;
    check_dims(cfg, x)?;
    let omega = omega.ok_or_else(|| Error::invalid("selection offset omega is not calibrated"))?;
    let xi = T::lit(cfg.xi_sel);
    let (c, o, t) = (cfg.d_c, cfg.d_o, cfg.d_t);
    Ok((0..x.rows())
        .map(|i| {
            let row = x.row(i);
            let ey0 = sum_sq(&row[..c + o]);
            let tau = sum_sq(&row[c + o..c + o + t]);
            Surface {
                mu: sigmoid(xi * (selection_score(cfg, row) - omega)),
                ey0,
                ey1: ey0 + tau,
                tau,
            }
        })
        .collect())
}

fn sample_variance<T: Scalar>(v: &[T]) -> T {
    let n = T::from_usize(v.len()).unwrap();
    let mean = v.iter().copied().sum::<T>() / n;
    v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (n - T::one())
}

/// Multiplicative noise scale `2 / (sd(E[Y1|x]) + sd(E[Y0|x]))`.
pub fn multiplicative_scale<T: Scalar>(ey0: &[T], ey1: &[T]) -> Result<T> {
    if ey0.len() < 2 {
        return Err(Error::invalid("need at least two rows to estimate surface variances"));
    }
    let denom = sample_variance(ey1).sqrt() + sample_variance(ey0).sqrt();
    if denom.is_nan() || denom <= T::zero() {
        return Err(Error::invalid("outcome surfaces have zero variance"));
    }
    Ok(T::lit(2.0) / denom)
}

/// Draws a full sample: covariates, actions, noisy outcomes and oracle.
///
/// Covariates, assignment and noise come from independent streams of the
/// config seed, so the additive and multiplicative variants of one seed
/// share `x`, `a` and every noiseless surface.
pub fn sample_dataset<T: Scalar>(cfg: &SyntheticConfig, n: usize) -> Result<(Dataset<T>, SyntheticOracle<T>)> {
    let x = sample_covariates::<T>(cfg, n)?;
    let omega = calibrate_omega(cfg, &x)?;
    let surf = true_surfaces(cfg, &x, Some(omega))?;
    let ey0: Vec<T> = surf.iter().map(|s| s.ey0).collect();
    let ey1: Vec<T> = surf.iter().map(|s| s.ey1).collect();

    let mut assign = cfg.rng(STREAM_ASSIGNMENT);
    let a: Vec<u8> = surf
        .iter()
        .map(|s| {
            let u: f64 = assign.random();
            u8::from(u < s.mu.as_f64())
        })
        .collect();

    let noise_scale = match cfg.noise {
        NoiseKind::Additive => None,
        NoiseKind::Multiplicative => Some(multiplicative_scale(&ey0, &ey1)?),
    };
    let mut noise = cfg.rng(STREAM_NOISE);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for s in &surf {
        let e0 = T::lit(noise.sample::<f64, _>(StandardNormal));
        let e1 = T::lit(noise.sample::<f64, _>(StandardNormal));
        match noise_scale {
            None => {
                y0.push(s.ey0 + e0);
                y1.push(s.ey1 + e1);
            }
            Some(k) => {
                y0.push(s.ey0 * (T::one() + k * e0));
                y1.push(s.ey1 * (T::one() + k * e1));
            }
        }
    }
    let y: Vec<T> = (0..n).map(|i| if a[i] == 1 { y1[i] } else { y0[i] }).collect();
    let tau: Vec<T> = surf.iter().map(|s| s.tau).collect();
    let mu: Vec<T> = surf.iter().map(|s| s.mu).collect();

    let mut ds = Dataset::new(x, a, y)?;
    ds.tau = Some(tau.clone());
    ds.mu = Some(mu.clone());
    ds.y0 = Some(y0.clone());
    ds.y1 = Some(y1.clone());
    let oracle = SyntheticOracle {
        mu,
        ey0,
        ey1,
        tau,
        y0,
        y1,
        omega,
        noise_scale,
    };
    Ok((ds, oracle))
}
