use dnnr::dataset::{make_folds, seeded_rng, Dataset, StandardScaler};
use dnnr::experiment::{run_experiment_on, DatasetSpec, ExperimentConfig, Method};
use dnnr::featscale::{train_weights, ScaleTrainConfig};
use dnnr::gradient::fit_local_lasso;
use dnnr::inspect::collect_relevance;
use dnnr::nnindex::{Index, ScalingWeights};
use dnnr::predictor::{fit_dnnr, DnnrConfig};
use dnnr::theory::{theorem1_conditions, tolerances, BoundInputs};
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;

fn uniform(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded_rng(seed);
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

fn smooth_data(n: usize, d: usize, seed: u64) -> Dataset {
    let x = uniform(n, d, seed);
    let y = x.map_axis(Axis(1), |r| (3.0 * r[0]).sin() + r.iter().map(|v| v * v).sum::<f64>());
    Dataset::new(x, y, None).unwrap()
}

fn weights(d: usize, seed: u64) -> ScalingWeights {
    let mut rng = seeded_rng(seed ^ 0xabc);
    ScalingWeights::new((0..d).map(|_| rng.random_range(0.1..3.0)).collect()).unwrap()
}

fn bound_inputs(epsilon: f64, ball_mass: f64, tau: f64) -> BoundInputs {
    BoundInputs {
        lipschitz: 40.0,
        mu: 1,
        delta: 0.05,
        epsilon,
        y_range: (0.0, 30.0),
        ball_mass,
        tau,
        sigma_min: 0.0,
        h_max: None,
        n_train: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn index_matches_brute_force(n in 1usize..=500, d in 1usize..=10, k_raw in 1usize..=20, seed in any::<u64>()) {
        let k = k_raw.min(n);
        let x = uniform(n, d, seed);
        let w = weights(d, seed);
        let index = Index::build(x.view(), &w).unwrap();
        let q: Vec<f64> = uniform(1, d, seed.wrapping_add(1)).row(0).to_vec();
        let got = index.query(&q, k, &[]).unwrap();
        let mut brute: Vec<f64> = rows(&x).iter().map(|r| w.distance(r, &q)).collect();
        brute.sort_by(f64::total_cmp);
        prop_assert_eq!(got.len(), k);
        for (i, (&id, &dist)) in got.indices.iter().zip(&got.distances).enumerate() {
            prop_assert!((dist - brute[i]).abs() <= 1e-12 * (1.0 + brute[i]));
            prop_assert!((w.distance(x.row(id).as_slice().unwrap(), &q) - dist).abs() <= 1e-12 * (1.0 + dist));
        }
    }

    #[test]
    fn common_weight_factor_keeps_neighbor_order(seed in any::<u64>(), c in 0.01f64..100.0) {
        let (n, d) = (200, 4);
        let x = uniform(n, d, seed);
        let w = weights(d, seed);
        let scaled = ScalingWeights::new(w.as_slice().iter().map(|v| v * c).collect()).unwrap();
        let q: Vec<f64> = uniform(1, d, !seed).row(0).to_vec();
        let a = Index::build(x.view(), &w).unwrap().query(&q, 10, &[]).unwrap();
        let b = Index::build(x.view(), &scaled).unwrap().query(&q, 10, &[]).unwrap();
        for (da, db) in a.distances.iter().zip(&b.distances) {
            prop_assert!((db / (c * c) - da).abs() <= 1e-10 * (1.0 + da));
        }
        for (i, (ia, ib)) in a.indices.iter().zip(&b.indices).enumerate() {
            if ia != ib {
                // only a near-tie may swap
                prop_assert!((a.distances[i] - w.distance(x.row(*ib).as_slice().unwrap(), &q)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weighted_metric_is_symmetric(seed in any::<u64>(), d in 1usize..=12) {
        let p = uniform(2, d, seed);
        let w = weights(d, seed);
        let (a, b) = (p.row(0).to_vec(), p.row(1).to_vec());
        prop_assert_eq!(w.distance(&a, &b), w.distance(&b, &a));
        prop_assert_eq!(w.distance(&a, &a), 0.0);
    }

    #[test]
    fn scaler_round_trip(seed in any::<u64>(), n in 2usize..100, d in 1usize..8, shift in -1e3f64..1e3, spread in 1e-3f64..1e3) {
        let x = uniform(n, d, seed).mapv(|v| shift + spread * v);
        let data = Dataset::new(x.clone(), Array1::zeros(n), None).unwrap();
        let scaler = StandardScaler::fit(&data).unwrap();
        let back = scaler.inverse_transform(scaler.transform(x.view()).unwrap().view()).unwrap();
        for (a, b) in x.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn folds_are_balanced_partitions(n in 2usize..2000, folds_raw in 2usize..12, seed in any::<u64>()) {
        let folds = folds_raw.min(n);
        let plan = make_folds(n, folds, seed).unwrap();
        let sizes = plan.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..folds {
            let mut all = plan.test_indices(f);
            all.extend(plan.train_indices(f));
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn affine_targets_are_reproduced(seed in any::<u64>(), d in 1usize..6, b in -10.0f64..10.0) {
        let mut rng = seeded_rng(seed);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = uniform(150, d, seed);
        let y = x.map_axis(Axis(1), |r| b + r.iter().zip(&a).map(|(u, v)| u * v).sum::<f64>());
        let data = Dataset::new(x, y, None).unwrap();
        let mut cfg = DnnrConfig::new(3, 4 * d);
        cfg.clip = false;
        let model = fit_dnnr(&data, &cfg, &ScalingWeights::identity(d)).unwrap();
        for q in rows(&uniform(10, d, !seed)) {
            let truth = b + q.iter().zip(&a).map(|(u, v)| u * v).sum::<f64>();
            prop_assert!((model.predict(&q).unwrap() - truth).abs() <= 1e-8 * (1.0 + truth.abs()));
        }
    }

    #[test]
    fn clipping_is_a_clamp_of_the_raw_mean(seed in any::<u64>()) {
        let data = smooth_data(120, 3, seed);
        let (lo, hi) = data.target_bounds();
        let model = fit_dnnr(&data, &DnnrConfig::new(3, 8), &ScalingWeights::identity(3)).unwrap();
        // queries partly outside the cube push the Taylor terms past the bounds
        for q in rows(&uniform(20, 3, !seed).mapv(|v| 3.0 * v - 1.0)) {
            let t = model.predict_traced(&q).unwrap();
            prop_assert_eq!(t.clipped, t.raw_mean.clamp(lo, hi));
            prop_assert_eq!(t.clipped.clamp(lo, hi), t.clipped);
            prop_assert_eq!(t.was_clipped, t.clipped != t.raw_mean);
        }
    }

    #[test]
    fn lasso_norm_shrinks_with_penalty(seed in any::<u64>(), l1 in 0.0f64..2.0, gap in 0.0f64..2.0) {
        let data = smooth_data(40, 4, seed);
        let ids: Vec<usize> = (1..25).collect();
        let norm = |lambda: f64| -> f64 {
            fit_local_lasso(data.features(), data.targets(), 0, &ids, lambda).unwrap().gamma.iter().map(|g| g.abs()).sum()
        };
        let (small, large) = (norm(l1), norm(l1 + gap));
        prop_assert!(large <= small + 1e-6 * (1.0 + small));
    }

    #[test]
    fn predictions_are_equivariant_to_rescaling(seed in any::<u64>(), c in 0.01f64..100.0, s in 0.01f64..100.0) {
        let data = smooth_data(150, 3, seed);
        let cfg = DnnrConfig::new(3, 9);
        let base = fit_dnnr(&data, &cfg, &ScalingWeights::identity(3)).unwrap();
        let scaled = Dataset::new(data.features().mapv(|v| v * c), data.targets().mapv(|v| v * s), None).unwrap();
        let other = fit_dnnr(&scaled, &cfg, &ScalingWeights::identity(3)).unwrap();
        for q in rows(&uniform(10, 3, !seed)) {
            let qc: Vec<f64> = q.iter().map(|v| v * c).collect();
            let (p0, p1) = (base.predict(&q).unwrap(), other.predict(&qc).unwrap());
            prop_assert!((p1 - s * p0).abs() <= 1e-8 * (1.0 + (s * p0).abs()));
        }
    }

    #[test]
    fn relevance_ignores_target_shift(seed in any::<u64>(), shift in -1e3f64..1e3) {
        let data = smooth_data(100, 3, seed);
        let moved = Dataset::new(data.features().to_owned(), data.targets().mapv(|v| v + shift), None).unwrap();
        let cfg = DnnrConfig::new(3, 8);
        let queries = rows(&uniform(8, 3, !seed));
        let a = collect_relevance(&fit_dnnr(&data, &cfg, &ScalingWeights::identity(3)).unwrap(), &queries).unwrap();
        let b = collect_relevance(&fit_dnnr(&moved, &cfg, &ScalingWeights::identity(3)).unwrap(), &queries).unwrap();
        for (u, v) in a.per_dimension.iter().flatten().zip(b.per_dimension.iter().flatten()) {
            prop_assert!((u - v).abs() <= 1e-6 * (1.0 + u.abs()) * (1.0 + shift.abs()));
        }
    }

    #[test]
    fn required_samples_grow_as_targets_tighten(eps in 0.01f64..1.0, shrink in 0.1f64..1.0, mass in 1e-9f64..0.5, tau in 0.0f64..20.0) {
        let loose = theorem1_conditions(&bound_inputs(eps, mass, tau)).unwrap();
        let tight = theorem1_conditions(&bound_inputs(eps * shrink, mass, tau)).unwrap();
        prop_assert!(loose.n_required.at_most(&tight.n_required));
        let thinner = theorem1_conditions(&bound_inputs(eps, mass * shrink, tau)).unwrap();
        prop_assert!(loose.n_required.at_most(&thinner.n_required));
        prop_assert!(loose.n_required.at_most(&loose.n_sufficient));
    }

    #[test]
    fn dnnr_tolerance_dominates_close_in(tau in 0.0f64..50.0, frac in 0.0f64..=1.0, theta in 0.1f64..100.0) {
        let h = frac * 2.0 / (1.0 + tau);
        let (dnnr, knn) = tolerances(h, theta, tau);
        prop_assert!(dnnr <= knn * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn weight_training_is_deterministic(seed in any::<u64>()) {
        let data = smooth_data(160, 3, seed);
        let cfg = ScaleTrainConfig { epochs: 2, seed, ..ScaleTrainConfig::for_dim(3) };
        prop_assert_eq!(train_weights(&data, &cfg).unwrap(), train_weights(&data, &cfg).unwrap());
    }

    #[test]
    fn experiments_are_deterministic(seed in any::<u64>()) {
        let spec = DatasetSpec::Friedman1 { n_samples: 150, n_features: 5, noise: 0.1, seed };
        let mut cfg = ExperimentConfig::new(Method::Dnnr, spec.clone());
        cfg.folds = 3;
        cfg.seed = seed;
        cfg.scale_train = Some(ScaleTrainConfig { epochs: 1, ..ScaleTrainConfig::for_dim(5) });
        let data = spec.load().unwrap();
        let a = run_experiment_on(&cfg, &data).unwrap().without_timing();
        let b = run_experiment_on(&cfg, &data).unwrap().without_timing();
        prop_assert_eq!(a, b);
    }
}
