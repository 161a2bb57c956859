#![allow(dead_code)]

use nurobust::data::Dataset;
use nurobust::nuisance::Arch;
use nurobust::tensor::Matrix;
use nurobust::train::{stream_rng, TrainerConfig};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn small_arch() -> Arch {
    Arch::new(&[32, 32])
}

pub fn fast_trainer(seed: u64) -> TrainerConfig {
    TrainerConfig {
        lr: 1e-2,
        batch_size: 64,
        max_epochs: 60,
        min_epochs: 0,
        patience: 8,
        seed,
    }
}

/// Rows with `x ~ U[-1, 1]^d`, `a` from `assign(x, u)`, `y` from `outcome(x, a, e)`.
pub fn toy(
    n: usize,
    d: usize,
    seed: u64,
    assign: impl Fn(&[f64], f64) -> u8,
    outcome: impl Fn(&[f64], u8, f64) -> f64,
) -> Dataset<f64> {
    let mut rng = stream_rng(seed, 77);
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let ai = assign(x.row(i), rng.random());
        let e: f64 = rng.sample(StandardNormal);
        a.push(ai);
        y.push(outcome(x.row(i), ai, e));
    }
    Dataset::new(x, a, y).unwrap()
}

pub fn coin(_: &[f64], u: f64) -> u8 {
    u8::from(u < 0.5)
}

pub fn tiny_snet() -> nurobust::estimators::SNetArch {
    nurobust::estimators::SNetArch {
        outcome_rep: vec![16, 16],
        propensity_rep: vec![16, 16],
        head: vec![16],
        ..Default::default()
    }
}

/// Noiseless linear arms with effect `2 x_2` and confounded assignment.
pub fn linear_effect(n: usize, seed: u64) -> Dataset<f64> {
    let mut ds = toy(
        n,
        4,
        seed,
        |x, u| u8::from(u < 1.0 / (1.0 + (-x[0]).exp())),
        |x, a, _| x[0] + x[1] + if a == 1 { 2.0 * x[2] } else { 0.0 },
    );
    ds.tau = Some((0..n).map(|i| 2.0 * ds.x.get(i, 2)).collect());
    ds.mu = Some((0..n).map(|i| 1.0 / (1.0 + (-ds.x.get(i, 0)).exp())).collect());
    ds
}

pub fn pehe_of(tau_hat: &[f64], tau: &[f64]) -> f64 {
    tau_hat.iter().zip(tau).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / tau.len() as f64
}
