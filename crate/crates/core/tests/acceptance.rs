//! Acceptance criteria, one line each. Run a subset with
//! `cargo test --test acceptance -- 4 5`.

use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use nurobust::bounds::{
    generalization_gap_experiment, random_instance, weighted_rademacher_linear, weighted_rademacher_linear_mc,
    CoverageConfig, LinearClassSpec,
};
use nurobust::data::{split_train_val, Dataset, SplitSpec};
use nurobust::estimators::snet::{factual_mse, PART_NAMES};
use nurobust::estimators::targets::{transformed_outcome_values, BatchVars, TargetVariant};
use nurobust::estimators::{train_drnet, train_snet, CateModel, SNet, SNetArch};
use nurobust::experiment::{run_experiment, Candidate, DatasetSpec, ExperimentConfig, HyperGrid, Method};
use nurobust::nuisance::{pretrain_nuisance, record_evidence, Arch};
use nurobust::robust::{
    record_nudrnet_objective, record_nusnet_objective, train_nudrnet, tune_nusnet, LagrangianState, RobustConfig,
};
use nurobust::synthetic::{
    calibrate_omega, sample_covariates, sample_dataset, true_surfaces, NoiseKind, SyntheticConfig,
};
use nurobust::tensor::{grad_check, Activation, Matrix, Mlp, MlpSpec, Var};
use nurobust::train::{derive_seed, stream_rng, TrainerConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn random_spec<R: Rng>(rng: &mut R, d: usize, out: Activation) -> MlpSpec {
    let depth = rng.random_range(1..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=6)).collect();
    let act = if rng.random::<bool>() {
        Activation::Elu
    } else {
        Activation::Sigmoid
    };
    MlpSpec::new(d, &hidden, 1, act, out)
}

fn random_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Matrix<f64> {
    Matrix::from_fn(n, d, |_, _| rng.random_range(-1.5..1.5))
}

fn actions(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i % 2) as u8).collect()
}

fn not_actions(a: &[u8]) -> Vec<f64> {
    a.iter().map(|&v| 1.0 - v as f64).collect()
}

/// Evidence of `mu` on `(x, a)` for placing the tolerance on either side of it.
fn plain_evidence(mu: &Mlp<f64>, x: &Matrix<f64>, a: &[u8]) -> f64 {
    nurobust::nuisance::evidence_from_probs(&nurobust::nuisance::predict_prob(mu, x).unwrap(), a).unwrap()
}

fn criterion_1() -> Outcome {
    let configs = 60;
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    let mut coords = 0;
    for k in 0..configs {
        let mut rng = stream_rng(k, 1);
        let d = rng.random_range(2..=4);
        let n = rng.random_range(5..=9);
        let x = random_rows(&mut rng, n, d);
        let a = actions(n);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let kind = k % 4;
        let report = match kind {
            0 => {
                let net = Mlp::<f64>::new(random_spec(&mut rng, d, Activation::Identity), &mut rng).unwrap();
                grad_check(net.params(), 1e-6, |t, p| {
                    let xv = t.constant(x.clone())?;
                    let yv = t.constant(Matrix::column(&y))?;
                    let out = net.record_with(t, xv, p)?;
                    let r = t.sub(out, yv)?;
                    let s = t.square(r)?;
                    t.mean(s)
                })
            }
            1 => {
                let net = Mlp::<f64>::new(random_spec(&mut rng, d, Activation::Sigmoid), &mut rng).unwrap();
                let af: Vec<f64> = a.iter().map(|&v| v as f64).collect();
                let na = not_actions(&a);
                grad_check(net.params(), 1e-6, |t, p| {
                    let xv = t.constant(x.clone())?;
                    let av = t.constant(Matrix::column(&af))?;
                    let nv = t.constant(Matrix::column(&na))?;
                    let out = net.record_with(t, xv, p)?;
                    record_evidence(t, out, av, nv)
                })
            }
            2 => {
                let theta = Mlp::<f64>::new(random_spec(&mut rng, d, Activation::Identity), &mut rng).unwrap();
                let mu = Mlp::<f64>::new(random_spec(&mut rng, d, Activation::Sigmoid), &mut rng).unwrap();
                let f0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let f1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let variant = if k % 8 == 2 {
                    TargetVariant::Dr
                } else {
                    TargetVariant::Ipw
                };
                let e0 = plain_evidence(&mu, &x, &a);
                let c = if (k / 4) % 2 == 0 { e0 - 0.05 } else { e0 + 0.05 };
                let state = LagrangianState {
                    alpha: rng.random_range(0.5..5.0),
                    lambda: rng.random_range(0.5..5.0),
                    ..LagrangianState::new(&RobustConfig::default())
                };
                let beta = rng.random_range(0.0..3.0);
                let split = theta.params().len();
                let params: Vec<Matrix<f64>> = theta.params().iter().chain(mu.params()).cloned().collect();
                grad_check(&params, 1e-6, |t, p| {
                    let b = BatchVars::record(t, &a, &y)?;
                    let xv = t.constant(x.clone())?;
                    let f0v = t.constant(Matrix::column(&f0))?;
                    let f1v = t.constant(Matrix::column(&f1))?;
                    let tau = theta.record_with(t, xv, &p[..split])?;
                    let m = mu.record_with(t, xv, &p[split..])?;
                    Ok(record_nudrnet_objective(t, variant, b, f0v, f1v, tau, m, &state, beta, c)?.j)
                })
            }
            _ => {
                let zw = rng.random_range(2..=4);
                let z1 = random_rows(&mut rng, n, zw);
                let z0 = random_rows(&mut rng, n, zw);
                let zm = random_rows(&mut rng, n, zw);
                let h1 = Mlp::<f64>::new(random_spec(&mut rng, zw, Activation::Identity), &mut rng).unwrap();
                let h0 = Mlp::<f64>::new(random_spec(&mut rng, zw, Activation::Identity), &mut rng).unwrap();
                let hm = Mlp::<f64>::new(random_spec(&mut rng, zw, Activation::Sigmoid), &mut rng).unwrap();
                let e0 = plain_evidence(&hm, &zm, &a);
                let c = if (k / 4) % 2 == 0 { e0 - 0.05 } else { e0 + 0.05 };
                let state = LagrangianState {
                    alpha: rng.random_range(0.5..5.0),
                    lambda: rng.random_range(0.5..5.0),
                    ..LagrangianState::new(&RobustConfig::default())
                };
                let beta = rng.random_range(0.0..3.0);
                let (s1, s0) = (h1.params().len(), h0.params().len());
                let params: Vec<Matrix<f64>> = h1
                    .params()
                    .iter()
                    .chain(h0.params())
                    .chain(hm.params())
                    .cloned()
                    .collect();
                grad_check(&params, 1e-6, |t, p: &[Var]| {
                    let b = BatchVars::record(t, &a, &y)?;
                    let v1 = t.constant(z1.clone())?;
                    let v0 = t.constant(z0.clone())?;
                    let vm = t.constant(zm.clone())?;
                    let y1 = h1.record_with(t, v1, &p[..s1])?;
                    let y0 = h0.record_with(t, v0, &p[s1..s1 + s0])?;
                    let m = hm.record_with(t, vm, &p[s1 + s0..])?;
                    Ok(record_nusnet_objective(t, b, y1, y0, m, &state, beta, c)?.j)
                })
            }
        }
        .unwrap();
        coords += report.coords_checked;
        if report.max_rel_error > worst {
            worst = report.max_rel_error;
            worst_case = format!("config {k} (kind {kind})");
        }
    }
    outcome(
        worst < 1e-5,
        format!("{configs} configurations, {coords} coordinates, max relative error {worst:.2e} at {worst_case}"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let cfg = SyntheticConfig::default().with_seed(2);
    let pool = sample_covariates::<f64>(&cfg, 10_001).unwrap();
    let omega = calibrate_omega(&cfg, &pool).unwrap();
    let points = pool.select_rows(&(0..20).collect::<Vec<_>>());
    let surf = true_surfaces(&cfg, &points, Some(omega)).unwrap();
    let draws = 1_000_000;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for (i, s) in surf.iter().enumerate() {
        // arbitrary, deliberately wrong outcome models
        let f0 = 0.7 * s.ey0 + 1.0;
        let f1 = s.ey1 - 2.0;
        let mut rng = stream_rng(derive_seed(2, i as u64), 0);
        let mut a = Vec::with_capacity(draws);
        let mut y = Vec::with_capacity(draws);
        for _ in 0..draws {
            let ai = u8::from(rng.random::<f64>() < s.mu);
            let e: f64 = rng.sample(StandardNormal);
            a.push(ai);
            y.push(if ai == 1 { s.ey1 } else { s.ey0 } + e);
        }
        let mu = vec![s.mu; draws];
        for variant in [TargetVariant::Ipw, TargetVariant::Dr] {
            let z = transformed_outcome_values(variant, &a, &y, &vec![f0; draws], &vec![f1; draws], &mu).unwrap();
            let m = z.iter().sum::<f64>() / draws as f64;
            let var = z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
            let se = (var / draws as f64).sqrt();
            let dev = (m - s.tau).abs() / se;
            worst = worst.max(dev);
            if dev > 3.0 {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("20 points x 2 variants, 1e6 draws each; max |mean z - tau| = {worst:.2} SE; {failures} beyond 3 SE"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut bound_failures = 0;
    let instances = 120;
    for k in 0..instances {
        let mut rng = stream_rng(3, k);
        let n = [20, 50, 100, 200][k as usize % 4];
        let d = 1 + (k as usize % 5);
        let spec = LinearClassSpec {
            b: rng.random_range(0.5..2.0),
            x_bound: rng.random_range(0.5..2.0),
            d,
        };
        let (x, w) = random_instance(&mut rng, n, d, spec.x_bound, 10.0);
        let r = weighted_rademacher_linear(&spec, &x, &w, 4000, k).unwrap();
        worst_ratio = worst_ratio.max((r.estimate - r.bound) / r.se);
        if r.estimate > r.bound + 3.0 * r.se {
            bound_failures += 1;
        }
    }
    let mut worst_agree = 0.0f64;
    let mut agree_failures = 0;
    let small = 40;
    for k in 0..small {
        let mut rng = stream_rng(33, k);
        let n = 1 + (k as usize % 12);
        let spec = LinearClassSpec {
            b: 1.0,
            x_bound: 1.0,
            d: 3,
        };
        let (x, w) = random_instance(&mut rng, n, 3, 1.0, 10.0);
        let exact = weighted_rademacher_linear(&spec, &x, &w, 0, 0).unwrap();
        let mc = weighted_rademacher_linear_mc(&spec, &x, &w, 100_000, k).unwrap();
        let dev = (mc.estimate - exact.estimate).abs() / mc.se.max(1e-300);
        worst_agree = worst_agree.max(dev);
        if !exact.exhaustive || exact.estimate > exact.bound * (1.0 + 1e-12) || dev > 3.0 {
            agree_failures += 1;
        }
    }
    outcome(
        bound_failures == 0 && agree_failures == 0,
        format!(
            "{instances} instances: max (estimate - bound)/SE = {worst_ratio:.1}, {bound_failures} above bound + 3 SE; \
             {small} exhaustive cases: max MC deviation {worst_agree:.2} SE, {agree_failures} failures"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let cfg = CoverageConfig {
        seed: 4,
        ..Default::default()
    };
    let rep = generalization_gap_experiment(&cfg).unwrap();
    outcome(
        rep.trials == 500 && rep.grid_size <= 200 && rep.violation_fraction <= 0.08,
        format!(
            "{} violations in {} datasets (fraction {:.3}); grid {} points; mean gap {:.4}, mean bound {:.4}",
            rep.violations, rep.trials, rep.violation_fraction, rep.grid_size, rep.mean_gap, rep.mean_bound
        ),
    )
}

// ---------------------------------------------------------------- 5

fn observed_split(ds: &Dataset<f64>, seed: u64) -> (Dataset<f64>, Dataset<f64>) {
    let (tr, va) = split_train_val(ds, SplitSpec { val_ratio: 0.3, seed }).unwrap();
    (tr.without_oracle(), va.without_oracle())
}

fn criterion_5() -> Outcome {
    let mut mismatches = Vec::new();
    let mut epochs = 0;
    for seed in [0u64, 1] {
        let (ds, _) = sample_dataset::<f64>(&SyntheticConfig::default().with_seed(50 + seed), 3000).unwrap();
        let (tr, va) = observed_split(&ds, seed);
        let cfg = TrainerConfig {
            max_epochs: 8,
            seed,
            ..Default::default()
        };
        let arch = Arch::default();
        let nu = pretrain_nuisance(&tr, &va, &arch, &cfg, Default::default()).unwrap();
        let (dr, dr_rep) = train_drnet(&tr, &va, &nu, &arch, &cfg).unwrap();
        let robust = RobustConfig {
            beta: 0.0,
            lr_mu: Some(0.0),
            min_epochs: cfg.min_epochs,
            ..Default::default()
        };
        let (nu_dr, rep) = train_nudrnet(&tr, &va, &nu, &arch, &cfg, &robust).unwrap();
        let bits = |m: &CateModel<f64>| match m {
            CateModel::Direct { tau } => tau.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            _ => unreachable!(),
        };
        let hist = |h: &[f64]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        epochs += rep.fit.epochs_run;
        if rep.c != nu.c || bits(&dr) != bits(&nu_dr) || hist(&dr_rep.history) != hist(&rep.fit.history) {
            mismatches.push(seed);
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("2 seeds, {epochs} epochs total, parameters and validation trajectory compared bitwise; mismatching seeds {mismatches:?}"),
    )
}

// ---------------------------------------------------------------- 6, 7

fn mean_selected(c: &[Candidate], method: Method, metric: &str) -> (f64, Vec<f64>) {
    let v: Vec<f64> = c
        .iter()
        .filter(|c| c.selected && c.method == method)
        .map(|c| c.metrics.iter().find(|m| m.name.as_str() == metric).unwrap().value)
        .collect();
    (v.iter().sum::<f64>() / v.len() as f64, v)
}

fn ordering(noise: NoiseKind, baseline: Method, reference: f64) -> Outcome {
    let cfg = ExperimentConfig {
        dataset: DatasetSpec::Synthetic {
            generator: SyntheticConfig::default().with_noise(noise),
            n_test: 10_000,
        },
        methods: vec![baseline, Method::Nudrnet],
        n: 10_000,
        seeds: (0..5).collect(),
        ..Default::default()
    };
    let out = run_experiment(&cfg, 1).unwrap();
    let (nu, nu_v) = mean_selected(&out.candidates, Method::Nudrnet, "pehe_mse");
    let (base, base_v) = mean_selected(&out.candidates, baseline, "pehe_mse");
    let (nu_r, _) = mean_selected(&out.candidates, Method::Nudrnet, "pehe_rmse");
    let (base_r, _) = mean_selected(&out.candidates, baseline, "pehe_rmse");
    let wins = nu_v.iter().zip(&base_v).filter(|(a, b)| a < b).count();
    let in_band = nu >= 0.5 * reference && nu <= 2.0 * reference;
    outcome(
        nu < base && in_band,
        format!(
            "pehe_mse NuDRNet {nu:.3} vs {} {base:.3} (NuDRNet lower in {wins}/5 seeds); band [{:.2}, {:.2}] {}; \
             pehe_rmse {nu_r:.3} vs {base_r:.3}",
            baseline.as_str(),
            0.5 * reference,
            2.0 * reference,
            if in_band { "met" } else { "missed" }
        ),
    )
}

fn criterion_6() -> Outcome {
    ordering(NoiseKind::Additive, Method::Drnet, 0.86)
}

fn criterion_7() -> Outcome {
    ordering(NoiseKind::Multiplicative, Method::Snet, 2.44)
}

// ---------------------------------------------------------------- 8

fn diag(c: &Candidate, key: &str) -> f64 {
    c.diagnostics.iter().find(|(k, _)| k == key).unwrap().1
}

fn criterion_8() -> Outcome {
    let cfg = ExperimentConfig {
        methods: vec![Method::Nudrnet],
        dataset: n_test_default(),
        n: 5000,
        seeds: (0..10).collect(),
        ..Default::default()
    };
    let out = run_experiment(&cfg, 1).unwrap();
    let runs = out.candidates.len();
    let ok = out
        .candidates
        .iter()
        .filter(|c| diag(c, "evidence_train") <= diag(c, "tolerance_c") + 0.05)
        .count();
    let betas = HyperGrid::default().beta;
    let avg: Vec<f64> = betas
        .iter()
        .map(|&b| {
            let v: Vec<f64> = out
                .candidates
                .iter()
                .filter(|c| c.point.unwrap().beta == b)
                .map(|c| diag(c, "mean_sq_weight"))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let monotone = avg.windows(2).all(|w| w[1] <= w[0]);
    let frac = ok as f64 / runs as f64;
    outcome(
        frac >= 0.9 && monotone,
        format!(
            "{ok}/{runs} runs within c + 0.05 ({:.0}%); mean squared weight by beta {:?}: {:?} ({})",
            100.0 * frac,
            betas,
            avg.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            if monotone { "non-increasing" } else { "not monotone" }
        ),
    )
}

fn n_test_default() -> DatasetSpec {
    DatasetSpec::Synthetic {
        generator: SyntheticConfig::default(),
        n_test: 10_000,
    }
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let (ds, _) = sample_dataset::<f64>(&SyntheticConfig::default().with_seed(9), 20_000).unwrap();
    let (tr, va) = observed_split(&ds, derive_seed(9, 1));
    let cfg = TrainerConfig::default().with_seed(derive_seed(9, 2));
    let (pre, _) = train_snet(&tr, &va, &SNetArch::default(), &cfg, 1.0).unwrap();
    let snet_val = factual_mse(&pre, &va).unwrap();
    let (tuned, rep) = tune_nusnet(&pre, &tr, &va, &cfg, &RobustConfig::default()).unwrap();
    let changed: Vec<&str> = pre
        .parts()
        .iter()
        .zip(tuned.parts())
        .take(SNet::<f64>::REPS)
        .enumerate()
        .filter(|(_, (a, b))| {
            a.flat_params()
                .iter()
                .map(|v| v.to_bits())
                .ne(b.flat_params().iter().map(|v| v.to_bits()))
        })
        .map(|(k, _)| PART_NAMES[k])
        .collect();
    let tuned_val = factual_mse(&tuned, &va).unwrap();
    outcome(
        changed.is_empty() && tuned_val <= snet_val,
        format!(
            "representations changed: {changed:?}; validation factual MSE SNet {snet_val:.4} -> NuSNet {tuned_val:.4} \
             after {} tuning epochs",
            rep.fit.epochs_run
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        dataset: DatasetSpec::Synthetic {
            generator: SyntheticConfig::default(),
            n_test: 2000,
        },
        methods: vec![Method::Drnet, Method::Nudrnet, Method::Snet, Method::Nusnet],
        n: 2000,
        seeds: vec![0, 1],
        grid: HyperGrid {
            alpha0: vec![1.0, 10.0],
            gamma: vec![2.0],
            beta: vec![100.0],
        },
        trainer: TrainerConfig {
            max_epochs: 10,
            ..Default::default()
        },
        robust: RobustConfig {
            min_epochs: 5,
            ..Default::default()
        },
        ..Default::default()
    };
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_nurobust"))
            .args([
                "sweep",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(
                false,
                format!("sweep failed: {}", String::from_utf8_lossy(&status.stderr)),
            );
        }
        files.push((
            std::fs::read(out.join("results.csv")).unwrap(),
            std::fs::read(out.join("grid.csv")).unwrap(),
        ));
    }
    let same = files[0] == files[1];
    outcome(
        same,
        format!(
            "two sweeps, {} + {} bytes of results and grid CSV, {}",
            files[0].0.len(),
            files[0].1.len(),
            if same { "identical" } else { "different" }
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient correctness", criterion_1),
        (2, "transformed outcome unbiasedness", criterion_2),
        (3, "weighted Rademacher bound for linear classes", criterion_3),
        (4, "generalization bound coverage", criterion_4),
        (5, "reduction to DRNet", criterion_5),
        (6, "ordering on additive noise", criterion_6),
        (7, "ordering on multiplicative noise", criterion_7),
        (8, "constraint satisfaction", criterion_8),
        (9, "NuSNet freezing", criterion_9),
        (10, "sweep determinism", criterion_10),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {id:>2} {} ({name}, {:.0} s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
