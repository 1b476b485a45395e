use chrono::{NaiveDate, TimeDelta};
use driftcast::changepoint::{op_detect, pelt_detect, solve_with_trace, CostModel, PenaltyConfig, PrefixCost};
use driftcast::data::{chronological_split, forward_fill, read_csv, write_csv_to, CsvSchema, Scaler, SplitSpec, TimeSeriesFrame, Timestamp};
use driftcast::features::{build_features, FeatureSpec};
use driftcast::lasso::{lasso_fit, LassoConfig};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn stamps(n: usize) -> Vec<Timestamp> {
    let t0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    (0..n as i64).map(|h| t0 + TimeDelta::hours(h)).collect()
}

/// Step-like series: a few random levels with bounded noise.
fn series(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    (4..=max_n, prop::collection::vec(-5.0..5.0f64, 1..5), prop::collection::vec(-1.0..1.0f64, max_n)).prop_map(
        |(n, levels, noise)| {
            let seg = n.div_ceil(levels.len());
            (0..n).map(|i| levels[i / seg] + noise[i]).collect()
        },
    )
}

fn model() -> impl Strategy<Value = CostModel> {
    prop_oneof![Just(CostModel::L2Mean), Just(CostModel::gaussian())]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pelt_matches_optimal_partitioning(values in series(200), model in model(), beta in 0.1..60.0f64, min_size in 1usize..6) {
        prop_assume!(values.len() >= 2 * min_size.max(model.min_segment_len()));
        let penalty = PenaltyConfig::new(beta).unwrap();
        let p = pelt_detect(&values, model, penalty, min_size).unwrap();
        let o = op_detect(&values, model, penalty, min_size).unwrap();
        prop_assert_eq!(p.changepoints(), o.changepoints());
        prop_assert!((p.total_cost() - o.total_cost()).abs() <= 1e-9);
    }

    #[test]
    fn segmentations_are_well_formed(values in series(150), beta in 0.1..30.0f64, min_size in 1usize..6) {
        prop_assume!(values.len() >= 2 * min_size);
        let seg = pelt_detect(&values, CostModel::L2Mean, PenaltyConfig::new(beta).unwrap(), min_size).unwrap();
        prop_assert_eq!(seg.n(), values.len());
        for r in seg.segments() {
            prop_assert!(r.len() >= min_size);
        }
        prop_assert!(seg.changepoints().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pruned_candidates_never_on_optimal_paths(values in series(150), beta in 0.1..30.0f64, min_size in 1usize..5) {
        prop_assume!(values.len() >= 2 * min_size);
        let table = PrefixCost::new(&values, CostModel::L2Mean).unwrap();
        let penalty = PenaltyConfig::new(beta).unwrap();
        let pelt = solve_with_trace(&table, penalty, min_size, true).unwrap();
        let op = solve_with_trace(&table, penalty, min_size, false).unwrap();
        for p in &pelt.pruned {
            for t in p.removed_from..=values.len() {
                prop_assert_ne!(op.back_pointer[t], p.candidate, "candidate {} chosen at {}", p.candidate, t);
            }
        }
    }

    #[test]
    fn changepoint_count_non_increasing_in_beta(values in series(120), betas in prop::collection::vec(0.05..80.0f64, 2..6)) {
        let mut betas = betas;
        betas.sort_by(f64::total_cmp);
        let counts: Vec<usize> = betas
            .iter()
            .map(|&b| pelt_detect(&values, CostModel::L2Mean, PenaltyConfig::new(b).unwrap(), 2).unwrap().changepoints().len())
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{:?} for {:?}", counts, betas);
    }

    #[test]
    fn csv_round_trip_is_value_identical(values in prop::collection::vec(prop::option::weighted(0.8, -1e6..1e6f64), 1..60)) {
        let frame = TimeSeriesFrame::new(stamps(values.len()), vec![("v".into(), values)]).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&frame, &mut buf, "timestamp").unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn forward_fill_is_idempotent(first in -10.0..10.0f64, rest in prop::collection::vec(prop::option::of(-10.0..10.0f64), 0..50)) {
        let mut values = vec![Some(first)];
        values.extend(rest);
        let frame = TimeSeriesFrame::new(stamps(values.len()), vec![("v".into(), values)]).unwrap();
        let once = forward_fill(&frame, "v").unwrap();
        prop_assert_eq!(once.missing_count("v").unwrap(), 0);
        prop_assert_eq!(forward_fill(&once, "v").unwrap(), once);
    }

    #[test]
    fn split_keeps_every_row_once(n in 10usize..300, fraction in 0.05..0.95f64) {
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let frame = TimeSeriesFrame::from_values(stamps(n), vec![("v".into(), values.clone())]).unwrap();
        let spec = SplitSpec::new(fraction).unwrap();
        prop_assume!(spec.boundary(n).is_ok());
        let (train, test) = chronological_split(&frame, spec).unwrap();
        let mut joined = train.values("v").unwrap();
        joined.extend(test.values("v").unwrap());
        prop_assert_eq!(joined, values);
        prop_assert_eq!(train.len(), (fraction * n as f64).floor() as usize);
    }

    #[test]
    fn scaler_sees_only_its_slice(train in prop::collection::vec(-5.0..5.0f64, 10..40), test in prop::collection::vec(50.0..90.0f64, 5..20)) {
        let mut all = train.clone();
        all.extend(&test);
        let frame = TimeSeriesFrame::from_values(stamps(all.len()), vec![("v".into(), all)]).unwrap();
        let train_frame = frame.slice_rows(0..train.len());
        let fitted = Scaler::fit(&train_frame, &["v"]).unwrap();
        let direct = Scaler::fit_vector("v", &train);
        prop_assert_eq!(&fitted, &direct);
        let applied = fitted.apply(&frame).unwrap();
        let back = fitted.invert(&applied).unwrap();
        for (a, b) in back.values("v").unwrap().iter().zip(frame.values("v").unwrap()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn feature_rows_and_determinism(n in 170usize..400, seed in 0u64..1000) {
        let values: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 100.0).collect();
        let frame = TimeSeriesFrame::from_values(stamps(n), vec![("y".into(), values)]).unwrap();
        let spec = FeatureSpec::default();
        let a = build_features(&frame, "y", &spec).unwrap();
        prop_assert_eq!(a.rows(), n - spec.warmup());
        prop_assert_eq!(a.content_hash(), build_features(&frame, "y", &spec).unwrap().content_hash());
    }

    #[test]
    fn lasso_sparsity_non_increasing_over_grid(seed in 0u64..500) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((80, 6), |_| rng.random_range(-1.0..1.0));
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = Array1::from_shape_fn(80, |i| (0..6).map(|j| x[[i, j]] * w[j]).sum::<f64>() + rng.random_range(-0.5..0.5));
        let names: Vec<String> = (0..6).map(|j| format!("x{j}")).collect();
        let counts: Vec<usize> = LassoConfig::default()
            .alpha_grid
            .iter()
            .map(|&a| lasso_fit(x.view(), y.view(), &names, a, &LassoConfig::default()).unwrap().nonzero_count())
            .collect();
        prop_assert!(counts.windows(2).all(|c| c[1] <= c[0]), "{:?}", counts);
    }
}
