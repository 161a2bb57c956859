//! Effect-estimation metrics.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::targets::{transformed_outcome_values, TargetVariant};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    PeheMse,
    PeheRmse,
    /// against the noisy per-row `y1 - y0`
    MseVsNoisyTau,
    /// against the inverse-propensity transformed outcome
    MseVsTransformed,
}

impl MetricName {
    pub const ALL: [MetricName; 4] = [
        MetricName::PeheMse,
        MetricName::PeheRmse,
        MetricName::MseVsNoisyTau,
        MetricName::MseVsTransformed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::PeheMse => "pehe_mse",
            MetricName::PeheRmse => "pehe_rmse",
            MetricName::MseVsNoisyTau => "mse_vs_noisy_tau",
            MetricName::MseVsTransformed => "mse_vs_transformed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: MetricName,
    pub value: f64,
    pub n_eval: usize,
}

fn mean_sq_diff<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::data(format!(
            "metric needs matching nonempty inputs ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&u, &v)| {
            let d = u.as_f64() - v.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// Mean squared effect error and its square root.
pub fn pehe<T: Scalar>(tau_hat: &[T], tau: &[T]) -> Result<(MetricValue, MetricValue)> {
    let m = mean_sq_diff(tau_hat, tau)?;
    let n_eval = tau.len();
    Ok((
        MetricValue {
            name: MetricName::PeheMse,
            value: m,
            n_eval,
        },
        MetricValue {
            name: MetricName::PeheRmse,
            value: m.sqrt(),
            n_eval,
        },
    ))
}

/// MSE against `y1 - y0` per row; needs both potential outcomes.
pub fn mse_vs_noisy_tau<T: Scalar>(tau_hat: &[T], ds: &Dataset<T>) -> Result<MetricValue> {
    let (Some(y0), Some(y1)) = (&ds.y0, &ds.y1) else {
        return Err(Error::MissingColumn("y0/y1".into()));
    };
    let noisy: Vec<T> = y1.iter().zip(y0).map(|(&u, &v)| u - v).collect();
    Ok(MetricValue {
        name: MetricName::MseVsNoisyTau,
        value: mean_sq_diff(tau_hat, &noisy)?,
        n_eval: noisy.len(),
    })
}

/// MSE against `z = a y / mu - (1 - a) y / (1 - mu)` with the true
/// propensity. Its expectation is the PEHE plus a constant that does not
/// depend on the estimate.
pub fn mse_transformed_target<T: Scalar>(tau_hat: &[T], ds: &Dataset<T>, mu_true: Option<&[T]>) -> Result<MetricValue> {
    let mu = mu_true
        .or(ds.mu.as_deref())
        .ok_or_else(|| Error::MissingColumn("mu".into()))?;
    let z = transformed_outcome_values(TargetVariant::Ipw, &ds.a, &ds.y, &[], &[], mu)?;
    Ok(MetricValue {
        name: MetricName::MseVsTransformed,
        value: mean_sq_diff(tau_hat, &z)?,
        n_eval: z.len(),
    })
}
