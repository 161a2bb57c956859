//! Instance weights and transformed outcomes, in plain and recorded form.
//!
//! The plain functions perform the same floating-point operations in the
//! same order as their tape counterparts, so both paths agree bitwise.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::{clamp_prob, predict_prob};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Mlp, Tape, Var};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetVariant {
    #[default]
    Dr,
    Ipw,
}

/// Per-row pseudo-outcome whose conditional mean is the CATE when the
/// propensity used to build it is correct.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedTarget<T> {
    pub z: Vec<T>,
    pub variant: TargetVariant,
    /// free-form label of the propensity source (`"mu0"`, `"oracle"`, ...)
    pub source: String,
}

fn indicator<T: Scalar>(a: u8) -> T {
    if a == 1 {
        T::one()
    } else {
        T::zero()
    }
}

fn check_len(n: usize, lens: &[usize]) -> Result<()> {
    if lens.iter().any(|&l| l != n) {
        return Err(Error::data(format!("column lengths {lens:?} do not match {n} rows")));
    }
    Ok(())
}

/// `w = a/mu + (1-a)/(1-mu)` with clamped `mu`.
pub fn ipw_weights<T: Scalar>(mu: &[T], a: &[u8]) -> Result<Vec<T>> {
    check_len(a.len(), &[mu.len()])?;
    Ok(mu
        .iter()
        .zip(a)
        .map(|(&m, &ai)| {
            let m = clamp_prob(m);
            let av: T = indicator(ai);
            av / m + (T::one() - av) / (T::one() - m)
        })
        .collect())
}

/// Transformed outcome from per-row nuisance values; `mu` is clamped.
pub fn transformed_outcome_values<T: Scalar>(
    variant: TargetVariant,
    a: &[u8],
    y: &[T],
    f0: &[T],
    f1: &[T],
    mu: &[T],
) -> Result<Vec<T>> {
    check_len(a.len(), &[y.len(), mu.len()])?;
    if variant == TargetVariant::Dr {
        check_len(a.len(), &[f0.len(), f1.len()])?;
    }
    let z = (0..a.len())
        .map(|i| {
            let av: T = indicator(a[i]);
            let na = T::one() - av;
            let m = clamp_prob(mu[i]);
            let q = T::one() - m;
            match variant {
                TargetVariant::Dr => {
                    let d = f1[i] - f0[i];
                    let t1 = (av * (y[i] - f1[i])) / m;
                    let t0 = (na * (y[i] - f0[i])) / q;
                    (d + t1) - t0
                }
                TargetVariant::Ipw => (av * y[i]) / m - (na * y[i]) / q,
            }
        })
        .collect();
    Ok(z)
}

/// Transformed outcome on `ds` using outcome models and a propensity model.
pub fn transformed_outcome<T: Scalar>(
    ds: &Dataset<T>,
    f0: &Mlp<T>,
    f1: &Mlp<T>,
    mu: &Mlp<T>,
    variant: TargetVariant,
) -> Result<TransformedTarget<T>> {
    let m = predict_prob(mu, &ds.x)?;
    transformed_outcome_with(ds, f0, f1, &m, variant, "model")
}

/// Transformed outcome with explicit per-row propensities.
pub fn transformed_outcome_with<T: Scalar>(
    ds: &Dataset<T>,
    f0: &Mlp<T>,
    f1: &Mlp<T>,
    mu: &[T],
    variant: TargetVariant,
    source: &str,
) -> Result<TransformedTarget<T>> {
    let (p0, p1) = match variant {
        TargetVariant::Dr => (f0.predict(&ds.x)?.into_vec(), f1.predict(&ds.x)?.into_vec()),
        TargetVariant::Ipw => (Vec::new(), Vec::new()),
    };
    Ok(TransformedTarget {
        z: transformed_outcome_values(variant, &ds.a, &ds.y, &p0, &p1, mu)?,
        variant,
        source: source.to_string(),
    })
}

/// Constant inputs shared by the recorded targets of one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct BatchVars {
    pub a: Var,
    pub not_a: Var,
    pub y: Var,
}

impl BatchVars {
    pub fn record<T: Scalar>(tape: &mut Tape<T>, a: &[u8], y: &[T]) -> Result<Self> {
        let av: Vec<T> = a.iter().map(|&v| indicator(v)).collect();
        let na: Vec<T> = av.iter().map(|&v| T::one() - v).collect();
        Ok(BatchVars {
            a: tape.constant(Matrix::column(&av))?,
            not_a: tape.constant(Matrix::column(&na))?,
            y: tape.constant(Matrix::column(y))?,
        })
    }
}

/// Clamps raw propensity outputs on the tape.
pub fn record_clamp<T: Scalar>(tape: &mut Tape<T>, mu: Var) -> Result<Var> {
    tape.clamp(mu, clamp_prob(T::zero()), clamp_prob(T::one()))
}

/// Recorded weights for clamped `mu`.
pub fn record_weights<T: Scalar>(tape: &mut Tape<T>, b: BatchVars, mu: Var) -> Result<Var> {
    let t1 = tape.div(b.a, mu)?;
    let q = tape.rsub(T::one(), mu)?;
    let t0 = tape.div(b.not_a, q)?;
    tape.add(t1, t0)
}

/// Recorded transformed outcome for clamped `mu`; `f0`, `f1` are only read
/// by the doubly robust variant.
pub fn record_transformed_outcome<T: Scalar>(
    tape: &mut Tape<T>,
    variant: TargetVariant,
    b: BatchVars,
    f0: Var,
    f1: Var,
    mu: Var,
) -> Result<Var> {
    let q = tape.rsub(T::one(), mu)?;
    match variant {
        TargetVariant::Dr => {
            let d = tape.sub(f1, f0)?;
            let r1 = tape.sub(b.y, f1)?;
            let n1 = tape.mul(b.a, r1)?;
            let t1 = tape.div(n1, mu)?;
            let r0 = tape.sub(b.y, f0)?;
            let n0 = tape.mul(b.not_a, r0)?;
            let t0 = tape.div(n0, q)?;
            let s = tape.add(d, t1)?;
            tape.sub(s, t0)
        }
        TargetVariant::Ipw => {
            let n1 = tape.mul(b.a, b.y)?;
            let t1 = tape.div(n1, mu)?;
            let n0 = tape.mul(b.not_a, b.y)?;
            let t0 = tape.div(n0, q)?;
            tape.sub(t1, t0)
        }
    }
}
