//! Shared-representation network with five extractors and three heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::targets::{record_clamp, BatchVars};
use crate::nuisance::{clamp_prob, mse, record_evidence};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Direction, Matrix, Mlp, MlpSpec, Optimizer, Tape, Var};
use crate::train::{fit, minibatches, FitReport, TrainerConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SNetArch {
    /// widths of the `phi1`, `phi0` and `phio` extractors
    pub outcome_rep: Vec<usize>,
    /// widths of the `phimu` and `phic` extractors
    pub propensity_rep: Vec<usize>,
    /// hidden widths of each head
    pub head: Vec<usize>,
    pub activation: Activation,
}

impl Default for SNetArch {
    fn default() -> Self {
        SNetArch {
            outcome_rep: vec![50, 50, 50],
            propensity_rep: vec![100, 100, 100],
            head: vec![100, 100],
            activation: Activation::Elu,
        }
    }
}

impl SNetArch {
    fn rep(&self, input: usize, widths: &[usize]) -> Result<MlpSpec> {
        let (last, hidden) = widths
            .split_last()
            .ok_or_else(|| Error::invalid("representation needs at least one layer"))?;
        Ok(MlpSpec::new(input, hidden, *last, self.activation, self.activation))
    }

    fn head(&self, input: usize, out: Activation) -> MlpSpec {
        MlpSpec::new(input, &self.head, 1, self.activation, out)
    }
}

/// Component order used by [`SNet::parts`]; the first [`SNet::REPS`] are
/// representation extractors.
pub const PART_NAMES: [&str; 8] = ["phi1", "phi0", "phio", "phic", "phimu", "h1", "h0", "hmu"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SNet<T> {
    pub phi1: Mlp<T>,
    pub phi0: Mlp<T>,
    pub phio: Mlp<T>,
    pub phic: Mlp<T>,
    pub phimu: Mlp<T>,
    pub h1: Mlp<T>,
    pub h0: Mlp<T>,
    pub hmu: Mlp<T>,
}

/// Head inputs computed from frozen representations.
#[derive(Debug, Clone, PartialEq)]
pub struct SNetFeatures<T> {
    /// `concat(phi1, phio, phic)`
    pub z1: Matrix<T>,
    /// `concat(phi0, phio, phic)`
    pub z0: Matrix<T>,
    /// `concat(phimu, phic)`
    pub zmu: Matrix<T>,
}

impl<T: Scalar> SNetFeatures<T> {
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        SNetFeatures {
            z1: self.z1.select_rows(idx),
            z0: self.z0.select_rows(idx),
            zmu: self.zmu.select_rows(idx),
        }
    }
}

/// Tape handles of one recorded forward pass.
#[derive(Debug, Clone)]
pub struct SNetVars {
    pub y1: Var,
    pub y0: Var,
    /// raw sigmoid output of the propensity head
    pub mu: Var,
    /// parameter vars per part, in [`PART_NAMES`] order; empty when frozen
    pub params: Vec<Vec<Var>>,
}

impl<T: Scalar> SNet<T> {
    pub const REPS: usize = 5;

    pub fn new<R: Rng + ?Sized>(arch: &SNetArch, d: usize, rng: &mut R) -> Result<Self> {
        let out_w = *arch.outcome_rep.last().unwrap_or(&0);
        let mu_w = *arch.propensity_rep.last().unwrap_or(&0);
        Ok(SNet {
            phi1: Mlp::new(arch.rep(d, &arch.outcome_rep)?, rng)?,
            phi0: Mlp::new(arch.rep(d, &arch.outcome_rep)?, rng)?,
            phio: Mlp::new(arch.rep(d, &arch.outcome_rep)?, rng)?,
            phic: Mlp::new(arch.rep(d, &arch.propensity_rep)?, rng)?,
            phimu: Mlp::new(arch.rep(d, &arch.propensity_rep)?, rng)?,
            h1: Mlp::new(arch.head(2 * out_w + mu_w, Activation::Identity), rng)?,
            h0: Mlp::new(arch.head(2 * out_w + mu_w, Activation::Identity), rng)?,
            hmu: Mlp::new(arch.head(2 * mu_w, Activation::Sigmoid), rng)?,
        })
    }

    pub fn parts(&self) -> [&Mlp<T>; 8] {
        [
            &self.phi1,
            &self.phi0,
            &self.phio,
            &self.phic,
            &self.phimu,
            &self.h1,
            &self.h0,
            &self.hmu,
        ]
    }

    pub fn parts_mut(&mut self) -> [&mut Mlp<T>; 8] {
        [
            &mut self.phi1,
            &mut self.phi0,
            &mut self.phio,
            &mut self.phic,
            &mut self.phimu,
            &mut self.h1,
            &mut self.h0,
            &mut self.hmu,
        ]
    }

    pub fn features(&self, x: &Matrix<T>) -> Result<SNetFeatures<T>> {
        let p1 = self.phi1.predict(x)?;
        let p0 = self.phi0.predict(x)?;
        let po = self.phio.predict(x)?;
        let pc = self.phic.predict(x)?;
        let pm = self.phimu.predict(x)?;
        Ok(SNetFeatures {
            z1: Matrix::hcat(&[&p1, &po, &pc])?,
            z0: Matrix::hcat(&[&p0, &po, &pc])?,
            zmu: Matrix::hcat(&[&pm, &pc])?,
        })
    }

    /// Head outputs `(y1, y0, mu)` on precomputed features; `mu` clamped.
    pub fn heads(&self, f: &SNetFeatures<T>) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        Ok((
            self.h1.predict(&f.z1)?.into_vec(),
            self.h0.predict(&f.z0)?.into_vec(),
            self.hmu
                .predict(&f.zmu)?
                .into_vec()
                .into_iter()
                .map(clamp_prob)
                .collect(),
        ))
    }

    /// Factual prediction `a h1 + (1-a) h0` and the clamped propensity.
    pub fn forward(&self, x: &Matrix<T>, a: &[u8]) -> Result<(Vec<T>, Vec<T>)> {
        if a.len() != x.rows() {
            return Err(Error::Shape {
                op: "snet forward",
                lhs: x.shape(),
                rhs: (a.len(), 1),
            });
        }
        let (y1, y0, mu) = self.heads(&self.features(x)?)?;
        Ok((factual(a, &y1, &y0), mu))
    }

    pub fn predict_cate(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        let f = self.features(x)?;
        let y1 = self.h1.predict(&f.z1)?;
        let y0 = self.h0.predict(&f.z0)?;
        Ok(y1.as_slice().iter().zip(y0.as_slice()).map(|(&u, &v)| u - v).collect())
    }

    /// Records the full network; representation and head parameters are
    /// trainable according to the flags.
    pub fn record(&self, tape: &mut Tape<T>, x: Var, reps: bool, heads: bool) -> Result<SNetVars> {
        let o1 = self.phi1.record(tape, x, reps)?;
        let o0 = self.phi0.record(tape, x, reps)?;
        let oo = self.phio.record(tape, x, reps)?;
        let oc = self.phic.record(tape, x, reps)?;
        let om = self.phimu.record(tape, x, reps)?;
        let z1 = tape.concat(&[o1.output, oo.output, oc.output])?;
        let z0 = tape.concat(&[o0.output, oo.output, oc.output])?;
        let zm = tape.concat(&[om.output, oc.output])?;
        let (y1, y0, mu, head_params) = self.record_heads(tape, z1, z0, zm, heads)?;
        let mut params = vec![o1.params, o0.params, oo.params, oc.params, om.params];
        params.extend(head_params);
        Ok(SNetVars { y1, y0, mu, params })
    }

    /// Records only the heads on given feature vars.
    pub fn record_heads(
        &self,
        tape: &mut Tape<T>,
        z1: Var,
        z0: Var,
        zmu: Var,
        trainable: bool,
    ) -> Result<(Var, Var, Var, Vec<Vec<Var>>)> {
        let h1 = self.h1.record(tape, z1, trainable)?;
        let h0 = self.h0.record(tape, z0, trainable)?;
        let hm = self.hmu.record(tape, zmu, trainable)?;
        Ok((h1.output, h0.output, hm.output, vec![h1.params, h0.params, hm.params]))
    }
}

/// `a y1 + (1-a) y0` per row.
pub fn factual<T: Scalar>(a: &[u8], y1: &[T], y0: &[T]) -> Vec<T> {
    a.iter()
        .zip(y1.iter().zip(y0))
        .map(|(&ai, (&u, &v))| {
            let av = if ai == 1 { T::one() } else { T::zero() };
            av * u + (T::one() - av) * v
        })
        .collect()
}

/// Recorded `a y1 + (1-a) y0`.
pub fn record_factual<T: Scalar>(tape: &mut Tape<T>, b: BatchVars, y1: Var, y0: Var) -> Result<Var> {
    let t1 = tape.mul(b.a, y1)?;
    let t0 = tape.mul(b.not_a, y0)?;
    tape.add(t1, t0)
}

/// Validation factual MSE.
pub fn factual_mse<T: Scalar>(net: &SNet<T>, ds: &Dataset<T>) -> Result<f64> {
    let (yhat, _) = net.forward(&ds.x, &ds.a)?;
    mse(&yhat, &ds.y)
}

/// An SNet with one optimizer per part.
#[derive(Debug, Clone)]
pub struct SNetLearner<T> {
    pub net: SNet<T>,
    pub opts: Vec<Optimizer<T>>,
}

impl<T: Scalar> SNetLearner<T> {
    pub fn new(net: SNet<T>, lr: f64, directions: [Direction; 8]) -> Result<Self> {
        let opts = directions
            .iter()
            .map(|&d| Optimizer::adam(lr, d))
            .collect::<Result<Vec<_>>>()?;
        Ok(SNetLearner { net, opts })
    }

    /// Steps every part whose vars were recorded trainable.
    pub fn step(&mut self, params: &[Vec<Var>], grads: &crate::tensor::Gradients<T>) -> Result<()> {
        for ((part, vars), opt) in self.net.parts_mut().into_iter().zip(params).zip(&mut self.opts) {
            if vars.is_empty() {
                continue;
            }
            let g: Vec<_> = vars
                .iter()
                .zip(part.params())
                .map(|(&v, p)| grads.get_or_zeros(v, p))
                .collect();
            opt.step(part.params_mut(), &g)?;
        }
        Ok(())
    }

    /// Steps only the heads, given head param vars in `[h1, h0, hmu]` order.
    pub fn step_heads(&mut self, params: &[Vec<Var>], grads: &crate::tensor::Gradients<T>) -> Result<()> {
        let mut all = vec![Vec::new(); SNet::<T>::REPS];
        all.extend(params.iter().cloned());
        self.step(&all, grads)
    }
}

/// Joint training of all parts on factual MSE plus `bce_weight` times the
/// propensity cross-entropy, early-stopped on validation factual MSE.
pub fn train_snet<T: Scalar>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    arch: &SNetArch,
    cfg: &TrainerConfig,
    bce_weight: f64,
) -> Result<(SNet<T>, FitReport)> {
    train.require_both_arms()?;
    let net = SNet::new(arch, train.d(), &mut cfg.init_rng())?;
    let mut learner = SNetLearner::new(net, cfg.lr, [Direction::Minimize; 8])?;
    let mut rng = cfg.batch_rng();
    let report = fit(
        &mut learner,
        cfg,
        false,
        |l, _| {
            for idx in minibatches(train.n(), cfg.batch_size, &mut rng) {
                let mut tape = Tape::new();
                let xb = tape.constant(train.x.select_rows(&idx))?;
                let ab: Vec<u8> = idx.iter().map(|&i| train.a[i]).collect();
                let yb: Vec<T> = idx.iter().map(|&i| train.y[i]).collect();
                let b = BatchVars::record(&mut tape, &ab, &yb)?;
                let vars = l.net.record(&mut tape, xb, true, true)?;
                let yhat = record_factual(&mut tape, b, vars.y1, vars.y0)?;
                let r = tape.sub(yhat, b.y)?;
                let sq = tape.square(r)?;
                let mut loss = tape.mean(sq)?;
                if bce_weight != 0.0 {
                    let mu = record_clamp(&mut tape, vars.mu)?;
                    let e = record_evidence(&mut tape, mu, b.a, b.not_a)?;
                    let e = tape.scale(e, T::lit(bce_weight))?;
                    loss = tape.add(loss, e)?;
                }
                let g = tape.backward(loss)?;
                l.step(&vars.params, &g)?;
            }
            Ok(())
        },
        |l| factual_mse(&l.net, val),
    )?;
    Ok((learner.net, report))
}
