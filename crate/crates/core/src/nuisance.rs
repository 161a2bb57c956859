//! Pre-training of the outcome heads and the propensity model, and the
//! evidence (validation cross-entropy) that fixes the ambiguity tolerance.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result, StageExt};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Direction, Matrix, Mlp, MlpSpec, Tape, Var};
use crate::train::{derive_seed, fit, minibatches, FitReport, Learner, TrainerConfig};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log or
/// reciprocal.
pub const PROB_EPS: f64 = 1e-6;

pub fn clamp_prob<T: Scalar>(p: T) -> T {
    p.max(T::lit(PROB_EPS)).min(T::lit(1.0 - PROB_EPS))
}

/// Hidden layout of a feed-forward model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Arch {
    /// Three 200-unit representation layers followed by two 100-unit
    /// hypothesis layers.
    fn default() -> Self {
        Arch {
            hidden: vec![200, 200, 200, 100, 100],
            activation: Activation::Elu,
        }
    }
}

impl Arch {
    pub fn new(hidden: &[usize]) -> Self {
        Arch {
            hidden: hidden.to_vec(),
            activation: Activation::Elu,
        }
    }

    pub fn regressor(&self, input: usize) -> MlpSpec {
        MlpSpec::new(input, &self.hidden, 1, self.activation, Activation::Identity)
    }

    pub fn classifier(&self, input: usize) -> MlpSpec {
        MlpSpec::new(input, &self.hidden, 1, self.activation, Activation::Sigmoid)
    }
}

/// Which split the tolerance `c` is measured on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToleranceSource {
    #[default]
    Validation,
    Train,
}

#[derive(Debug, Clone)]
pub struct NuisanceTriple<T> {
    pub f0: Mlp<T>,
    pub f1: Mlp<T>,
    pub mu0: Mlp<T>,
    /// evidence of `mu0` at freeze time
    pub c: f64,
}

impl<T: Scalar> NuisanceTriple<T> {
    /// Clamped propensity predictions.
    pub fn propensity(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        predict_prob(&self.mu0, x)
    }
}

/// Clamped sigmoid outputs of a propensity network.
pub fn predict_prob<T: Scalar>(mu: &Mlp<T>, x: &Matrix<T>) -> Result<Vec<T>> {
    Ok(mu.predict(x)?.into_vec().into_iter().map(clamp_prob).collect())
}

/// Mean binary cross-entropy of clamped probabilities.
pub fn evidence_from_probs<T: Scalar>(probs: &[T], a: &[u8]) -> Result<f64> {
    if probs.is_empty() || probs.len() != a.len() {
        return Err(Error::data(format!(
            "evidence needs matching nonempty inputs ({} probabilities, {} actions)",
            probs.len(),
            a.len()
        )));
    }
    let mut total = T::zero();
    for (&p, &ai) in probs.iter().zip(a) {
        let p = clamp_prob(p);
        let av = if ai == 1 { T::one() } else { T::zero() };
        total += av * p.ln() + (T::one() - av) * (T::one() - p).ln();
    }
    Ok(-(total / T::lit(probs.len() as f64)).as_f64())
}

/// Ê(μ) on `ds`.
pub fn evidence<T: Scalar>(mu: &Mlp<T>, ds: &Dataset<T>) -> Result<f64> {
    evidence_from_probs(&predict_prob(mu, &ds.x)?, &ds.a)
}

/// Records the clamped cross-entropy of raw probabilities `p` against the
/// 0/1 column `a`; `not_a` must hold `1 - a`.
pub fn record_evidence<T: Scalar>(tape: &mut Tape<T>, p: Var, a: Var, not_a: Var) -> Result<Var> {
    let p = tape.clamp(p, T::lit(PROB_EPS), T::lit(1.0 - PROB_EPS))?;
    let lp = tape.log(p)?;
    let q = tape.rsub(T::one(), p)?;
    let lq = tape.log(q)?;
    let t1 = tape.mul(a, lp)?;
    let t0 = tape.mul(not_a, lq)?;
    let s = tape.add(t1, t0)?;
    let m = tape.mean(s)?;
    tape.scale(m, -T::one())
}

pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::data(format!(
            "mse needs matching nonempty inputs ({} vs {})",
            pred.len(),
            target.len()
        )));
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = (p - t).as_f64();
            d * d
        })
        .sum();
    Ok(s / pred.len() as f64)
}

/// Fits `learner` to `(x, y)` by minibatch MSE with early stopping on
/// validation MSE.
pub fn fit_regression<T: Scalar>(
    learner: &mut Learner<T>,
    x: &Matrix<T>,
    y: &[T],
    val_x: &Matrix<T>,
    val_y: &[T],
    cfg: &TrainerConfig,
) -> Result<FitReport> {
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(Error::data("regression inputs must be nonempty and aligned"));
    }
    let mut rng = cfg.batch_rng();
    let y = Matrix::column(y);
    fit(
        learner,
        cfg,
        false,
        |l, _| {
            for idx in minibatches(x.rows(), cfg.batch_size, &mut rng) {
                let mut tape = Tape::new();
                let xb = tape.constant(x.select_rows(&idx))?;
                let yb = tape.constant(y.select_rows(&idx))?;
                let out = l.net.record(&mut tape, xb, true)?;
                let r = tape.sub(out.output, yb)?;
                let sq = tape.square(r)?;
                let loss = tape.mean(sq)?;
                let g = tape.backward(loss)?;
                let grads: Vec<_> = out
                    .params
                    .iter()
                    .zip(l.net.params())
                    .map(|(&v, p)| g.get_or_zeros(v, p))
                    .collect();
                l.step(&grads)?;
            }
            Ok(())
        },
        |l| mse(l.net.predict(val_x)?.as_slice(), val_y),
    )
}

/// Fits `f_a` on the rows with action `a`, separately for each arm. Both
/// networks start from the same initialization, so their difference is
/// identically zero before training.
pub fn pretrain_outcome_heads<T: Scalar>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    arch: &Arch,
    cfg: &TrainerConfig,
) -> Result<(Mlp<T>, Mlp<T>)> {
    train.require_both_arms()?;
    val.require_both_arms()
        .map_err(|e| Error::data(format!("validation split: {e}")))?;
    let fit_arm = |arm: u8| -> Result<Mlp<T>> {
        let cfg = cfg.with_seed(derive_seed(cfg.seed, 0));
        let tr = train.subset(&train.arm_indices(arm));
        let va = val.subset(&val.arm_indices(arm));
        let mut l = Learner::init(arch.regressor(train.d()), &cfg, Direction::Minimize)?;
        fit_regression(&mut l, &tr.x, &tr.y, &va.x, &va.y, &cfg)?;
        Ok(l.net)
    };
    let (f0, f1) = rayon::join(|| fit_arm(0), || fit_arm(1));
    Ok((f0?, f1?))
}

/// Fits the propensity model by cross-entropy with early stopping on
/// validation evidence. Returns the model and its validation evidence.
pub fn pretrain_propensity<T: Scalar>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    arch: &Arch,
    cfg: &TrainerConfig,
) -> Result<(Mlp<T>, f64)> {
    train.require_both_arms()?;
    let cfg = cfg.with_seed(derive_seed(cfg.seed, 2));
    let mut learner = Learner::init(arch.classifier(train.d()), &cfg, Direction::Minimize)?;
    let mut rng = cfg.batch_rng();
    let a = train.a_column();
    let not_a = a.map(|v| T::one() - v);
    let report = fit(
        &mut learner,
        &cfg,
        false,
        |l, _| {
            for idx in minibatches(train.n(), cfg.batch_size, &mut rng) {
                let mut tape = Tape::new();
                let xb = tape.constant(train.x.select_rows(&idx))?;
                let ab = tape.constant(a.select_rows(&idx))?;
                let nb = tape.constant(not_a.select_rows(&idx))?;
                let out = l.net.record(&mut tape, xb, true)?;
                let loss = record_evidence(&mut tape, out.output, ab, nb)?;
                let g = tape.backward(loss)?;
                let grads: Vec<_> = out
                    .params
                    .iter()
                    .zip(l.net.params())
                    .map(|(&v, p)| g.get_or_zeros(v, p))
                    .collect();
                l.step(&grads)?;
            }
            Ok(())
        },
        |l| evidence(&l.net, val),
    )?;
    Ok((learner.net, report.best_score))
}

/// Pre-trains `(f0, f1, mu0)` and fixes the tolerance `c`.
pub fn pretrain_nuisance<T: Scalar>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    arch: &Arch,
    cfg: &TrainerConfig,
    tolerance: ToleranceSource,
) -> Result<NuisanceTriple<T>> {
    let (heads, prop) = rayon::join(
        || pretrain_outcome_heads(train, val, arch, cfg).stage("outcome heads"),
        || pretrain_propensity(train, val, arch, cfg).stage("propensity"),
    );
    let (f0, f1) = heads?;
    let (mu0, val_evidence) = prop?;
    let c = match tolerance {
        ToleranceSource::Validation => val_evidence,
        ToleranceSource::Train => evidence(&mu0, train)?,
    };
    Ok(NuisanceTriple { f0, f1, mu0, c })
}
