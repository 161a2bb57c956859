//! Minibatch epoch loop with early stopping and best-so-far snapshots.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Direction, Matrix, Mlp, MlpSpec, Optimizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// no early stop before this many epochs
    pub min_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lr: 1e-3,
            batch_size: 256,
            max_epochs: 200,
            min_epochs: 0,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and max epochs must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Generator for parameter initialization.
    pub fn init_rng(&self) -> ChaCha8Rng {
        stream_rng(self.seed, 10)
    }

    /// Generator for minibatch shuffling.
    pub fn batch_rng(&self) -> ChaCha8Rng {
        stream_rng(self.seed, 11)
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Independent child seed for sub-task `tag` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    stream_rng(seed, 1000 + tag).next_u64()
}

/// A network together with its optimizer state.
#[derive(Debug, Clone)]
pub struct Learner<T> {
    pub net: Mlp<T>,
    pub opt: Optimizer<T>,
}

impl<T: Scalar> Learner<T> {
    /// Fresh Adam learner initialized from `cfg.init_rng()`.
    pub fn init(spec: MlpSpec, cfg: &TrainerConfig, direction: Direction) -> Result<Self> {
        Self::from_net(Mlp::new(spec, &mut cfg.init_rng())?, cfg.lr, direction)
    }

    pub fn from_net(net: Mlp<T>, lr: f64, direction: Direction) -> Result<Self> {
        Ok(Learner {
            net,
            opt: Optimizer::adam(lr, direction)?,
        })
    }

    pub fn step(&mut self, grads: &[Matrix<T>]) -> Result<()> {
        self.opt.step(self.net.params_mut(), grads)
    }
}

/// Shuffled minibatches of `0..n`.
pub fn minibatches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// validation score after each completed epoch (index 0 = initial state
    /// when it was scored)
    pub history: Vec<f64>,
    pub best_score: f64,
    /// position of the returned state in `history`
    pub best_index: usize,
    pub epochs_run: usize,
    pub diverged: bool,
}

/// Drives a model through epochs.
///
/// `epoch` runs one pass over the training data and may fail with a
/// non-finite error, which is treated as divergence: the best snapshot is
/// restored and training stops. `score` is the validation criterion (lower
/// is better). With `score_initial` the untrained state is a candidate too.
pub fn fit<M, E, S>(
    model: &mut M,
    cfg: &TrainerConfig,
    score_initial: bool,
    mut epoch: E,
    score: S,
) -> Result<FitReport>
where
    M: Clone,
    E: FnMut(&mut M, usize) -> Result<()>,
    S: Fn(&M) -> Result<f64>,
{
    cfg.validate()?;
    let mut history = Vec::new();
    let mut best: Option<(f64, M, usize)> = None;
    if score_initial {
        let s = score(model)?;
        history.push(s);
        if s.is_finite() {
            best = Some((s, model.clone(), 0));
        }
    }
    let mut since_best = 0usize;
    let mut diverged = false;
    let mut epochs_run = 0;
    for k in 0..cfg.max_epochs {
        match epoch(model, k) {
            Ok(()) => {}
            Err(Error::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        epochs_run += 1;
        let s = match score(model) {
            Ok(s) if s.is_finite() => s,
            Ok(_) | Err(Error::NonFinite(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        history.push(s);
        let improved = best.as_ref().is_none_or(|(b, _, _)| s < *b);
        if improved {
            best = Some((s, model.clone(), history.len() - 1));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if epochs_run >= cfg.min_epochs && since_best >= cfg.patience {
            break;
        }
    }
    let Some((best_score, snapshot, best_index)) = best else {
        return Err(Error::Diverged(0));
    };
    *model = snapshot;
    Ok(FitReport {
        history,
        best_score,
        best_index,
        epochs_run,
        diverged,
    })
}
