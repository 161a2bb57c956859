use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Whether a step descends or ascends the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

/// First-order optimizer state for one parameter group.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: T,
    direction: Direction,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, direction: Direction) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr: T::lit(lr),
            direction,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn sgd(lr: f64, direction: Direction) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, direction)
    }

    pub fn adam(lr: f64, direction: Direction) -> Result<Self> {
        Self::new(OptimizerKind::adam(), lr, direction)
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Applies one update. `grads[i]` is the gradient of the objective with
    /// respect to `params[i]`; a maximizing optimizer follows `+grad`.
    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &[Matrix<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g, "optimizer_step")?;
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
        }
        if self.lr == T::zero() {
            self.steps += 1;
            return Ok(());
        }
        let sign = match self.direction {
            Direction::Minimize => T::one(),
            Direction::Maximize => -T::one(),
        };
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, &gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        let d = gv * sign;
                        *pv -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
                    self.second = self.first.clone();
                }
                let t = self.steps + 1;
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let bc1 = T::one() - b1.powi(t);
                let bc2 = T::one() - b2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    let it = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
                    for ((pv, &gv), (mv, vv)) in it {
                        let d = gv * sign;
                        *mv = b1 * *mv + (T::one() - b1) * d;
                        *vv = b2 * *vv + (T::one() - b2) * d * d;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}
