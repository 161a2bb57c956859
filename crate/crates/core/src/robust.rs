//! Adversarial min-max training of an effect model against a propensity
//! model restricted to an evidence ball, with a squared-weight penalty and
//! an augmented Lagrangian schedule for the evidence constraint.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::snet::{factual_mse, record_factual, SNet, SNetFeatures, SNetLearner};
use crate::estimators::targets::{
    ipw_weights, record_clamp, record_transformed_outcome, record_weights, transformed_outcome, BatchVars,
    TargetVariant,
};
use crate::estimators::CateModel;
use crate::nuisance::{
    evidence, evidence_from_probs, predict_prob, record_evidence, Arch, NuisanceTriple, ToleranceSource,
};
use crate::scalar::Scalar;
use crate::tensor::{Direction, Matrix, Mlp, Optimizer, Tape, Var};
use crate::train::{fit, minibatches, FitReport, Learner, TrainerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    pub alpha0: f64,
    pub gamma: f64,
    /// squared-weight coefficient
    pub beta: f64,
    pub lambda0: f64,
    /// improvement factor for the escalation test
    pub rho: f64,
    /// escalate when `g_k < rho g_{k-1}` instead of `g_k > rho g_{k-1}`
    pub literal_escalation: bool,
    /// propensity step size; `None` uses the trainer's rate
    pub lr_mu: Option<f64>,
    /// refresh the objective between the effect and propensity steps
    pub alternating: bool,
    pub min_epochs: usize,
    pub variant: TargetVariant,
    pub tolerance: ToleranceSource,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            alpha0: 1.0,
            gamma: 2.0,
            beta: 100.0,
            lambda0: 1.0,
            rho: 0.9,
            literal_escalation: false,
            lr_mu: None,
            alternating: false,
            min_epochs: 40,
            variant: TargetVariant::Dr,
            tolerance: ToleranceSource::Validation,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha0 >= 0.0
            && self.gamma > 1.0
            && self.beta >= 0.0
            && self.lambda0 > 0.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.lr_mu.is_none_or(|v| v >= 0.0 && v.is_finite());
        if !ok {
            return Err(Error::invalid(format!("invalid robust config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianState {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub rho: f64,
    /// last constraint violation
    pub g: Option<f64>,
    pub literal: bool,
}

impl LagrangianState {
    pub fn new(cfg: &RobustConfig) -> Self {
        LagrangianState {
            alpha: cfg.alpha0,
            lambda: cfg.lambda0,
            gamma: cfg.gamma,
            rho: cfg.rho,
            g: None,
            literal: cfg.literal_escalation,
        }
    }

    /// End-of-epoch update from the current evidence. Returns `g_k`.
    pub fn update(&mut self, evidence: f64, c: f64) -> f64 {
        let g = (evidence - c).max(0.0);
        self.alpha += self.lambda * g;
        if let Some(prev) = self.g {
            let escalate = if self.literal {
                g < self.rho * prev
            } else {
                g > self.rho * prev
            };
            if escalate {
                self.lambda *= self.gamma;
            }
        }
        self.g = Some(g);
        g
    }
}

/// Recorded pieces of the adversarial objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveTerms {
    pub j: Var,
    pub risk: Var,
    pub mean_sq_weight: Var,
    pub evidence: Var,
    pub violation: Var,
}

/// `J = risk - beta mean(w^2) - alpha v - lambda v^2` with
/// `v = max(0, evidence - c)`.
pub fn adversarial_objective<T: Scalar>(
    tape: &mut Tape<T>,
    risk: Var,
    w: Var,
    evidence: Var,
    state: &LagrangianState,
    beta: f64,
    c: f64,
) -> Result<ObjectiveTerms> {
    let w2 = tape.square(w)?;
    let msw = tape.mean(w2)?;
    let excess = tape.offset(evidence, T::lit(-c))?;
    let v = tape.relu(excess)?;
    let v2 = tape.square(v)?;
    let wterm = tape.scale(msw, T::lit(beta))?;
    let lin = tape.scale(v, T::lit(state.alpha))?;
    let quad = tape.scale(v2, T::lit(state.lambda))?;
    let j = tape.sub(risk, wterm)?;
    let j = tape.sub(j, lin)?;
    let j = tape.sub(j, quad)?;
    Ok(ObjectiveTerms {
        j,
        risk,
        mean_sq_weight: msw,
        evidence,
        violation: v,
    })
}

/// Objective for the direct effect model: `tau` is the effect network's
/// output and `mu_raw` the propensity network's sigmoid output on the batch.
#[allow(clippy::too_many_arguments)]
pub fn record_nudrnet_objective<T: Scalar>(
    tape: &mut Tape<T>,
    variant: TargetVariant,
    b: BatchVars,
    f0: Var,
    f1: Var,
    tau: Var,
    mu_raw: Var,
    state: &LagrangianState,
    beta: f64,
    c: f64,
) -> Result<ObjectiveTerms> {
    let mu = record_clamp(tape, mu_raw)?;
    let z = record_transformed_outcome(tape, variant, b, f0, f1, mu)?;
    let r = tape.sub(tau, z)?;
    let sq = tape.square(r)?;
    let risk = tape.mean(sq)?;
    let w = record_weights(tape, b, mu)?;
    let e = record_evidence(tape, mu, b.a, b.not_a)?;
    adversarial_objective(tape, risk, w, e, state, beta, c)
}

/// Self-normalized weighted factual risk `sum w (y - yhat)^2 / sum w`.
pub fn record_weighted_risk<T: Scalar>(tape: &mut Tape<T>, b: BatchVars, yhat: Var, w: Var) -> Result<Var> {
    let r = tape.sub(yhat, b.y)?;
    let sq = tape.square(r)?;
    let ws = tape.mul(w, sq)?;
    let num = tape.sum(ws)?;
    let den = tape.sum(w)?;
    tape.div(num, den)
}

/// Objective for the shared-representation heads.
#[allow(clippy::too_many_arguments)]
pub fn record_nusnet_objective<T: Scalar>(
    tape: &mut Tape<T>,
    b: BatchVars,
    y1: Var,
    y0: Var,
    mu_raw: Var,
    state: &LagrangianState,
    beta: f64,
    c: f64,
) -> Result<ObjectiveTerms> {
    let mu = record_clamp(tape, mu_raw)?;
    let yhat = record_factual(tape, b, y1, y0)?;
    let w = record_weights(tape, b, mu)?;
    let risk = record_weighted_risk(tape, b, yhat, w)?;
    let e = record_evidence(tape, mu, b.a, b.not_a)?;
    adversarial_objective(tape, risk, w, e, state, beta, c)
}

/// Diagnostics of one adversarial run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustReport {
    pub fit: FitReport,
    pub c: f64,
    /// per-epoch constraint violations
    pub g_history: Vec<f64>,
    pub alpha: f64,
    pub lambda: f64,
    /// Ê on the training split for the returned propensity
    pub evidence_train: f64,
    /// mean squared weight on the training split for the returned propensity
    pub mean_sq_weight: f64,
}

#[derive(Debug, Clone)]
struct NuDrState<T> {
    theta: Learner<T>,
    mu: Learner<T>,
    lag: LagrangianState,
}

fn grads_for<T: Scalar>(g: &crate::tensor::Gradients<T>, vars: &[Var], net: &Mlp<T>) -> Vec<Matrix<T>> {
    vars.iter()
        .zip(net.params())
        .map(|(&v, p)| g.get_or_zeros(v, p))
        .collect()
}

fn mean_sq<T: Scalar>(w: &[T]) -> f64 {
    w.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / w.len().max(1) as f64
}

/// Adversarial training of a direct effect network. The propensity starts
/// at the pre-trained model; validation is MSE against the target built
/// from the pre-trained propensity, and the best-so-far effect network is
/// returned.
pub fn train_nudrnet<T: Scalar>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    nuisance: &NuisanceTriple<T>,
    arch: &Arch,
    cfg: &TrainerConfig,
    robust: &RobustConfig,
) -> Result<(CateModel<T>, RobustReport)> {
    robust.validate()?;
    train.require_both_arms()?;
    let c = nuisance.c;
    let tcfg = TrainerConfig {
        min_epochs: robust.min_epochs,
        ..*cfg
    };
    let f0_tr = nuisance.f0.predict(&train.x)?;
    let f1_tr = nuisance.f1.predict(&train.x)?;
    let z_val = transformed_outcome(val, &nuisance.f0, &nuisance.f1, &nuisance.mu0, robust.variant)?.z;
    let mut state = NuDrState {
        theta: Learner::init(arch.regressor(train.d()), &tcfg, Direction::Minimize)?,
        mu: Learner::from_net(
            nuisance.mu0.clone(),
            robust.lr_mu.unwrap_or(cfg.lr),
            Direction::Maximize,
        )?,
        lag: LagrangianState::new(robust),
    };
    let mut rng = tcfg.batch_rng();
    let mut g_history = Vec::new();

    let record =
        |s: &NuDrState<T>, tape: &mut Tape<T>, idx: &[usize]| -> Result<(ObjectiveTerms, Vec<Var>, Vec<Var>)> {
            let xb = tape.constant(train.x.select_rows(idx))?;
            let ab: Vec<u8> = idx.iter().map(|&i| train.a[i]).collect();
            let yb: Vec<T> = idx.iter().map(|&i| train.y[i]).collect();
            let b = BatchVars::record(tape, &ab, &yb)?;
            let f0 = tape.constant(f0_tr.select_rows(idx))?;
            let f1 = tape.constant(f1_tr.select_rows(idx))?;
            let th = s.theta.net.record(tape, xb, true)?;
            let mu = s.mu.net.record(tape, xb, true)?;
            let terms = record_nudrnet_objective(
                tape,
                robust.variant,
                b,
                f0,
                f1,
                th.output,
                mu.output,
                &s.lag,
                robust.beta,
                c,
            )?;
            Ok((terms, th.params, mu.params))
        };

    let report = fit(
        &mut state,
        &tcfg,
        false,
        |s, _| {
            for idx in minibatches(train.n(), tcfg.batch_size, &mut rng) {
                let mut tape = Tape::new();
                let (terms, th, mu) = record(s, &mut tape, &idx)?;
                let g = tape.backward(terms.j)?;
                let gt = grads_for(&g, &th, &s.theta.net);
                s.theta.step(&gt)?;
                if robust.alternating {
                    let mut tape = Tape::new();
                    let (terms, _, mu) = record(s, &mut tape, &idx)?;
                    let g = tape.backward(terms.j)?;
                    let gm = grads_for(&g, &mu, &s.mu.net);
                    s.mu.step(&gm)?;
                } else {
                    let gm = grads_for(&g, &mu, &s.mu.net);
                    s.mu.step(&gm)?;
                }
            }
            let e = evidence(&s.mu.net, train)?;
            g_history.push(s.lag.update(e, c));
            Ok(())
        },
        |s| crate::nuisance::mse(s.theta.net.predict(&val.x)?.as_slice(), &z_val),
    )?;
    let probs = predict_prob(&state.mu.net, &train.x)?;
    let rep = RobustReport {
        fit: report,
        c,
        g_history,
        alpha: state.lag.alpha,
        lambda: state.lag.lambda,
        evidence_train: evidence_from_probs(&probs, &train.a)?,
        mean_sq_weight: mean_sq(&ipw_weights(&probs, &train.a)?),
    };
    Ok((CateModel::Direct { tau: state.theta.net }, rep))
}

#[derive(Debug, Clone)]
struct NuSnetState<T> {
    learner: SNetLearner<T>,
    lag: LagrangianState,
}

/// Adversarial tuning of the heads of a pre-trained SNet. The five
/// representation extractors stay frozen; the outcome heads minimize and
/// the propensity head maximizes. Validation is factual MSE, and the
/// pre-trained state is itself a candidate for the returned model.
pub fn tune_nusnet<T: Scalar>(
    pretrained: &SNet<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainerConfig,
    robust: &RobustConfig,
) -> Result<(SNet<T>, RobustReport)> {
    robust.validate()?;
    train.require_both_arms()?;
    let tcfg = TrainerConfig {
        min_epochs: robust.min_epochs,
        ..*cfg
    };
    let feats_tr = pretrained.features(&train.x)?;
    let mu_evidence = |net: &SNet<T>, ds: &Dataset<T>, f: &SNetFeatures<T>| -> Result<f64> {
        evidence_from_probs(&net.heads(f)?.2, &ds.a)
    };
    let c = match robust.tolerance {
        ToleranceSource::Validation => mu_evidence(pretrained, val, &pretrained.features(&val.x)?)?,
        ToleranceSource::Train => mu_evidence(pretrained, train, &feats_tr)?,
    };
    let lr_mu = robust.lr_mu.unwrap_or(cfg.lr);
    let mut opts = Vec::with_capacity(8);
    for k in 0..8 {
        opts.push(match k {
            7 => Optimizer::adam(lr_mu, Direction::Maximize)?,
            _ => Optimizer::adam(cfg.lr, Direction::Minimize)?,
        });
    }
    let mut state = NuSnetState {
        learner: SNetLearner {
            net: pretrained.clone(),
            opts,
        },
        lag: LagrangianState::new(robust),
    };
    let mut rng = tcfg.batch_rng();
    let mut g_history = Vec::new();

    let record = |s: &NuSnetState<T>, tape: &mut Tape<T>, idx: &[usize]| -> Result<(ObjectiveTerms, Vec<Vec<Var>>)> {
        let fb = feats_tr.select_rows(idx);
        let ab: Vec<u8> = idx.iter().map(|&i| train.a[i]).collect();
        let yb: Vec<T> = idx.iter().map(|&i| train.y[i]).collect();
        let b = BatchVars::record(tape, &ab, &yb)?;
        let z1 = tape.constant(fb.z1)?;
        let z0 = tape.constant(fb.z0)?;
        let zm = tape.constant(fb.zmu)?;
        let (y1, y0, mu, params) = s.learner.net.record_heads(tape, z1, z0, zm, true)?;
        let terms = record_nusnet_objective(tape, b, y1, y0, mu, &s.lag, robust.beta, c)?;
        Ok((terms, params))
    };
    // keeps only the chosen heads' vars so a step touches nothing else
    let only = |params: &[Vec<Var>], keep: &[usize]| -> Vec<Vec<Var>> {
        params
            .iter()
            .enumerate()
            .map(|(k, v)| if keep.contains(&k) { v.clone() } else { Vec::new() })
            .collect()
    };

    let report = fit(
        &mut state,
        &tcfg,
        true,
        |s, _| {
            for idx in minibatches(train.n(), tcfg.batch_size, &mut rng) {
                let mut tape = Tape::new();
                let (terms, params) = record(s, &mut tape, &idx)?;
                let g = tape.backward(terms.j)?;
                if robust.alternating {
                    s.learner.step_heads(&only(&params, &[0, 1]), &g)?;
                    let mut tape = Tape::new();
                    let (terms, params) = record(s, &mut tape, &idx)?;
                    let g = tape.backward(terms.j)?;
                    s.learner.step_heads(&only(&params, &[2]), &g)?;
                } else {
                    s.learner.step_heads(&params, &g)?;
                }
            }
            let e = mu_evidence(&s.learner.net, train, &feats_tr)?;
            g_history.push(s.lag.update(e, c));
            Ok(())
        },
        |s| factual_mse(&s.learner.net, val),
    )?;
    let probs = state.learner.net.heads(&feats_tr)?.2;
    let rep = RobustReport {
        fit: report,
        c,
        g_history,
        alpha: state.lag.alpha,
        lambda: state.lag.lambda,
        evidence_train: evidence_from_probs(&probs, &train.a)?,
        mean_sq_weight: mean_sq(&ipw_weights(&probs, &train.a)?),
    };
    Ok((state.learner.net, rep))
}
