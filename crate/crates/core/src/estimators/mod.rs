//! CATE estimators: two-model difference, direct regression on a
//! transformed outcome, and the shared-representation network.

pub mod snet;
pub mod targets;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::{fit_regression, pretrain_outcome_heads, Arch, NuisanceTriple};
use crate::scalar::Scalar;
use crate::tensor::{Direction, Matrix, Mlp};
use crate::train::{FitReport, Learner, TrainerConfig};

pub use snet::{train_snet, SNet, SNetArch};
pub use targets::{ipw_weights, transformed_outcome, TargetVariant, TransformedTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CateModel<T> {
    /// `f1(x) - f0(x)`
    TNet {
        f0: Mlp<T>,
        f1: Mlp<T>,
    },
    /// network output is the effect itself
    Direct {
        tau: Mlp<T>,
    },
    SNet {
        net: SNet<T>,
    },
}

impl<T: Scalar> CateModel<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            CateModel::TNet { .. } => "tnet",
            CateModel::Direct { .. } => "direct",
            CateModel::SNet { .. } => "snet",
        }
    }

    pub fn predict_cate(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        let tau = match self {
            CateModel::TNet { f0, f1 } => {
                let p1 = f1.predict(x)?;
                let p0 = f0.predict(x)?;
                p1.as_slice().iter().zip(p0.as_slice()).map(|(&u, &v)| u - v).collect()
            }
            CateModel::Direct { tau } => tau.predict(x)?.into_vec(),
            CateModel::SNet { net } => net.predict_cate(x)?,
        };
        if tau.iter().any(|t: &T| !t.is_finite()) {
            return Err(Error::NonFinite("cate prediction"));
        }
        Ok(tau)
    }
}

/// Separate outcome networks per arm, sharing their initialization.
pub fn train_tnet<T: Scalar>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    arch: &Arch,
    cfg: &TrainerConfig,
) -> Result<CateModel<T>> {
    let (f0, f1) = pretrain_outcome_heads(train, val, arch, cfg)?;
    Ok(CateModel::TNet { f0, f1 })
}

/// Regresses a direct effect network on precomputed targets, early-stopped
/// on validation MSE against `z_val`.
pub fn train_direct<T: Scalar>(
    x: &Matrix<T>,
    z: &[T],
    val_x: &Matrix<T>,
    z_val: &[T],
    arch: &Arch,
    cfg: &TrainerConfig,
) -> Result<(CateModel<T>, FitReport)> {
    let mut learner = Learner::init(arch.regressor(x.cols()), cfg, Direction::Minimize)?;
    let report = fit_regression(&mut learner, x, z, val_x, z_val, cfg)?;
    Ok((CateModel::Direct { tau: learner.net }, report))
}

/// Direct regression on the doubly robust target built from the
/// pre-trained nuisance models.
pub fn train_drnet<T: Scalar>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    nuisance: &NuisanceTriple<T>,
    arch: &Arch,
    cfg: &TrainerConfig,
) -> Result<(CateModel<T>, FitReport)> {
    let NuisanceTriple { f0, f1, mu0, .. } = nuisance;
    let z = transformed_outcome(train, f0, f1, mu0, TargetVariant::Dr)?;
    let zv = transformed_outcome(val, f0, f1, mu0, TargetVariant::Dr)?;
    train_direct(&train.x, &z.z, &val.x, &zv.z, arch, cfg)
}

/// DRNet with the true propensity in place of the fitted one.
pub fn train_drnet_oracle<T: Scalar>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    nuisance: &NuisanceTriple<T>,
    arch: &Arch,
    cfg: &TrainerConfig,
) -> Result<(CateModel<T>, FitReport)> {
    let true_mu =
        |ds: &Dataset<T>| -> Result<Vec<T>> { ds.mu.clone().ok_or_else(|| Error::MissingColumn("mu".into())) };
    let z = targets::transformed_outcome_with(
        train,
        &nuisance.f0,
        &nuisance.f1,
        &true_mu(train)?,
        TargetVariant::Dr,
        "oracle",
    )?;
    let zv = targets::transformed_outcome_with(
        val,
        &nuisance.f0,
        &nuisance.f1,
        &true_mu(val)?,
        TargetVariant::Dr,
        "oracle",
    )?;
    train_direct(&train.x, &z.z, &val.x, &zv.z, arch, cfg)
}
