//! Central finite-difference check of tape gradients.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::matrix::Matrix;
use crate::tensor::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of `|ad - fd| / max(|ad|, |fd|, floor)`
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares autodiff gradients with central differences of step `h`.
///
/// `loss_fn` records a scalar loss given the parameter vars. The relative
/// error denominator is floored at `1e-3 * max(1, |loss|)` so coordinates
/// whose true gradient is at the finite-difference noise level do not
/// dominate the report.
pub fn grad_check<T, F>(params: &[Matrix<T>], h: f64, loss_fn: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Matrix<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = ps.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
        let l = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(l).item()?.as_f64())
    };

    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let l = loss_fn(&mut tape, &vars)?;
    let loss = tape.value(l).item()?.as_f64();
    let grads = tape.backward(l)?;
    let floor = 1e-3 * loss.abs().max(1.0);

    let mut work: Vec<Matrix<T>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coords_checked: 0,
        loss,
    };
    for (pi, p) in params.iter().enumerate() {
        let ad = grads.get_or_zeros(vars[pi], p);
        for k in 0..p.len() {
            let orig = p.as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + T::lit(h);
            let up = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig - T::lit(h);
            let down = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = ad.as_slice()[k].as_f64();
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs()).max(floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
