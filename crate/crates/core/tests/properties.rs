use proptest::prelude::*;

use nurobust::bounds::{linear_bound_thm42, weighted_rademacher_linear, LinearClassSpec};
use nurobust::data::{split_indices, ResultRow, SplitSpec};
use nurobust::estimators::targets::{
    ipw_weights, record_transformed_outcome, transformed_outcome_values, BatchVars, TargetVariant,
};
use nurobust::experiment::metrics::pehe;
use nurobust::experiment::report::summarize;
use nurobust::nuisance::{evidence_from_probs, Arch};
use nurobust::robust::{LagrangianState, RobustConfig};
use nurobust::tensor::{Matrix, Mlp, Tape};
use nurobust::train::stream_rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn rows_case() -> impl Strategy<Value = (Matrix<f64>, Vec<usize>)> {
    (1usize..40, 1usize..6).prop_flat_map(|(n, d)| (matrix(n, d), prop::collection::vec(0..n, 1..n + 1)))
}

fn arms() -> impl Strategy<Value = (Vec<u8>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0.01..0.99f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_rows_do_not_depend_on_batch((x, idx) in rows_case(), seed in 0u64..1000) {
        let mut rng = stream_rng(seed, 0);
        let net = Mlp::<f64>::new(Arch::new(&[7, 5]).regressor(x.cols()), &mut rng).unwrap();
        let full = net.predict(&x).unwrap();
        let part = net.predict(&x.select_rows(&idx)).unwrap();
        for (k, &i) in idx.iter().enumerate() {
            prop_assert_eq!(part.get(k, 0).to_bits(), full.get(i, 0).to_bits());
        }
    }

    #[test]
    fn matmul_matches_naive_product(a in matrix(4, 3), b in matrix(3, 5)) {
        let c = a.matmul(&b).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let naive: f64 = (0..3).map(|k| a.get(i, k) * b.get(k, j)).sum();
                prop_assert!((c.get(i, j) - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_propensity_weights_at_least_one((a, _, _, _, mu) in arms()) {
        let w = ipw_weights(&mu, &a).unwrap();
        for ((&wi, &ai), &m) in w.iter().zip(&a).zip(&mu) {
            prop_assert!(wi >= 1.0);
            let expect = if ai == 1 { 1.0 / m } else { 1.0 / (1.0 - m) };
            prop_assert!((wi - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn perfect_outcome_models_make_propensity_irrelevant((a, f0, f1, _, mu) in arms()) {
        let y: Vec<f64> = a.iter().enumerate().map(|(i, &ai)| if ai == 1 { f1[i] } else { f0[i] }).collect();
        let z = transformed_outcome_values(TargetVariant::Dr, &a, &y, &f0, &f1, &mu).unwrap();
        for i in 0..z.len() {
            prop_assert_eq!(z[i], f1[i] - f0[i]);
        }
    }

    #[test]
    fn dr_with_zero_outcome_models_is_ipw((a, y, _, _, mu) in arms()) {
        let zeros = vec![0.0; a.len()];
        let dr = transformed_outcome_values(TargetVariant::Dr, &a, &y, &zeros, &zeros, &mu).unwrap();
        let ipw = transformed_outcome_values(TargetVariant::Ipw, &a, &y, &zeros, &zeros, &mu).unwrap();
        for (u, v) in dr.iter().zip(&ipw) {
            prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
    }

    #[test]
    fn recorded_target_is_plain_target((a, y, f0, f1, mu) in arms(), ipw in any::<bool>()) {
        let variant = if ipw { TargetVariant::Ipw } else { TargetVariant::Dr };
        let plain = transformed_outcome_values(variant, &a, &y, &f0, &f1, &mu).unwrap();
        let mut tape = Tape::<f64>::new();
        let b = BatchVars::record(&mut tape, &a, &y).unwrap();
        let f0v = tape.constant(Matrix::column(&f0)).unwrap();
        let f1v = tape.constant(Matrix::column(&f1)).unwrap();
        let mv = tape.constant(Matrix::column(&mu)).unwrap();
        let z = record_transformed_outcome(&mut tape, variant, b, f0v, f1v, mv).unwrap();
        let rec: Vec<u64> = tape.value(z).as_slice().iter().map(|v| v.to_bits()).collect();
        let pl: Vec<u64> = plain.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(rec, pl);
    }

    #[test]
    fn evidence_is_nonnegative((a, _, _, _, mu) in arms()) {
        prop_assert!(evidence_from_probs(&mu, &a).unwrap() >= 0.0);
        let half = vec![0.5; a.len()];
        prop_assert!((evidence_from_probs(&half, &a).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_estimate_never_exceeds_bound(n in 1usize..9, d in 1usize..4, seed in 0u64..500, w_max in 1.0..10.0f64) {
        let spec = LinearClassSpec { b: 1.5, x_bound: 2.0, d };
        let (x, w) = nurobust::bounds::random_instance(&mut stream_rng(seed, 3), n, d, spec.x_bound, w_max);
        let r = weighted_rademacher_linear(&spec, &x, &w, 0, seed).unwrap();
        prop_assert!(r.exhaustive);
        prop_assert!(r.estimate <= r.bound * (1.0 + 1e-12));
    }

    #[test]
    fn bound_scales_with_weights(w in prop::collection::vec(1.0..20.0f64, 1..50), k in 0.1..10.0f64) {
        let spec = LinearClassSpec { b: 1.0, x_bound: 1.0, d: 2 };
        let scaled: Vec<f64> = w.iter().map(|v| v * k).collect();
        let base = linear_bound_thm42(&spec, &w);
        prop_assert!((linear_bound_thm42(&spec, &scaled) - k * base).abs() <= 1e-12 * k * base);
        // uniform unit weights give B X / sqrt(N)
        let ones = vec![1.0; w.len()];
        prop_assert!((linear_bound_thm42(&spec, &ones) - 1.0 / (w.len() as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn multipliers_never_decrease(evidence in prop::collection::vec(0.0..2.0f64, 1..30), c in 0.0..1.0f64) {
        let mut s = LagrangianState::new(&RobustConfig::default());
        for e in evidence {
            let (alpha, lambda) = (s.alpha, s.lambda);
            let g = s.update(e, c);
            prop_assert!(g >= 0.0);
            prop_assert!(s.alpha >= alpha && s.lambda >= lambda);
            prop_assert!(s.lambda == lambda || s.lambda == lambda * 2.0);
        }
    }

    #[test]
    fn split_is_a_partition(n in 2usize..500, r in 0.05..0.95f64, seed in any::<u64>()) {
        if let Ok((tr, va)) = split_indices(n, SplitSpec { val_ratio: r, seed }) {
            let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(va.len(), (r * n as f64).round() as usize);
        }
    }

    #[test]
    fn rmse_is_root_of_mse(t in prop::collection::vec(-10.0..10.0f64, 1..50), off in -3.0..3.0f64) {
        let hat: Vec<f64> = t.iter().map(|v| v + off).collect();
        let (m, r) = pehe(&hat, &t).unwrap();
        prop_assert!((r.value * r.value - m.value).abs() <= 1e-12 * m.value.max(1.0));
        prop_assert!((m.value - off * off).abs() <= 1e-9);
    }

    #[test]
    fn summary_mean_lies_within_values(v in prop::collection::vec(-100.0..100.0f64, 1..20)) {
        let rows: Vec<ResultRow> = v.iter().enumerate().map(|(s, &value)| ResultRow {
            method: "m".into(), dataset: "d".into(), n: 1, seed: s as u64, metric: "x".into(), value, params: "{}".into(),
        }).collect();
        let s = summarize(&rows);
        prop_assert_eq!(s.len(), 1);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s[0].mean >= lo - 1e-9 && s[0].mean <= hi + 1e-9);
        prop_assert!(s[0].se >= 0.0);
        prop_assert_eq!(s[0].count, v.len());
    }
}
