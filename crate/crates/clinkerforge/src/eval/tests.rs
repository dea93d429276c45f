use super::*;
use crate::datamodel::{AlignedSample, FeatureSetSpec, Group};
use approx::assert_abs_diff_eq;
use chrono::{DateTime, Duration, TimeZone};

fn ts(hours: i64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap() + Duration::hours(hours)
}

/// CO-only dataset with a planted linear target plus optional noise.
fn co_dataset(n: usize, seed: u64, noise: f64) -> Dataset {
    let mut rng = derive_rng(seed, "test.eval.data", 0);
    let spec = FeatureSetSpec::new(&[Group::Co]);
    let rows: Vec<AlignedSample> = (0..n)
        .map(|i| {
            let features: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let base = 60.0 + 2.0 * features[0] - 1.5 * features[1] + 0.5 * features[3];
            let jitter = noise * (rng.random::<f64>() - 0.5);
            AlignedSample {
                clinker_timestamp: ts(i as i64),
                features,
                targets: [base + jitter, 15.0 + 0.5 * jitter, 14.0],
            }
        })
        .collect();
    Dataset::new(spec, rows).unwrap()
}

#[test]
fn mape_matches_hand_arithmetic() {
    assert_abs_diff_eq!(mape(&[50.0, 60.0], &[55.0, 54.0]).unwrap(), 10.0, epsilon = 1e-12);
    assert_eq!(mape(&[50.0], &[50.0]).unwrap(), 0.0);
    assert!(matches!(mape(&[0.0, 1.0], &[1.0, 1.0]), Err(EvalError::ZeroTrueValue { index: 0 })));
}

#[test]
fn mae_matches_hand_arithmetic() {
    assert_abs_diff_eq!(mae(&[1.0, 1.0], &[0.0, 4.0]).unwrap(), 2.0);
    assert_eq!(mae(&[3.0], &[4.5]).unwrap(), 1.5);
    assert_eq!(mae(&[1.0], &[1.0]).unwrap(), 0.0);
    assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch { .. })));
}

#[test]
fn r2_has_its_reference_points() {
    let y = [1.0, 2.0, 3.0, 4.0];
    assert_abs_diff_eq!(r2(&y, &y).unwrap(), 1.0);
    let mean = [2.5; 4];
    assert_abs_diff_eq!(r2(&y, &mean).unwrap(), 0.0);
    let worse = [4.0, 1.0, 4.0, 1.0];
    assert!(r2(&y, &worse).unwrap() < 0.0);
    assert!(matches!(r2(&[2.0, 2.0], &[1.0, 3.0]), Err(EvalError::ConstantTarget)));
}

#[test]
fn r2_is_invariant_under_common_affine_transform() {
    let y = [3.0, 7.0, 1.0, 9.0, 4.0];
    let p = [2.8, 6.5, 1.9, 8.2, 4.4];
    let a = r2(&y, &p).unwrap();
    let ys: Vec<f64> = y.iter().map(|v| (v - 4.8) / 3.1).collect();
    let ps: Vec<f64> = p.iter().map(|v| (v - 4.8) / 3.1).collect();
    let b = r2(&ys, &ps).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
}

#[test]
fn split_sizes_and_union_are_exact() {
    let ds = co_dataset(10, 1, 0.1);
    let (labeled, stats) = split_train_test(&ds, 0.8, 3, SplitMode::Random).unwrap();
    let labels = labeled.split_labels().unwrap();
    let train = labels.iter().filter(|l| **l == crate::datamodel::Split::Train).count();
    let test = labels.iter().filter(|l| **l == crate::datamodel::Split::Test).count();
    assert_eq!((train, test), (8, 2));
    assert_eq!(labels.len(), 10);
    assert_eq!(stats[0].rows + stats[1].rows, 10);
    // Multiset union: every row keeps its original position and data.
    for (a, b) in ds.rows().iter().zip(labeled.rows()) {
        assert_eq!(a, b);
    }
}

#[test]
fn temporal_holdout_reserves_leading_months() {
    let ds = co_dataset(24 * 70, 2, 0.1); // ten weeks of hourly rows
    let (labeled, stats) =
        split_train_test(&ds, 0.8, 1, SplitMode::TemporalHoldout { months: 2 }).unwrap();
    let labels = labeled.split_labels().unwrap();
    let cutoff = Utc.with_ymd_and_hms(2020, 3, 1, 0, 0, 0).unwrap();
    for (row, label) in labeled.rows().iter().zip(labels) {
        if row.clinker_timestamp < cutoff {
            assert_eq!(*label, crate::datamodel::Split::Holdout);
        } else {
            assert_ne!(*label, crate::datamodel::Split::Holdout);
        }
    }
    assert_eq!(stats.len(), 3);
}

#[test]
fn identical_seed_reproduces_the_split() {
    let ds = co_dataset(50, 3, 0.1);
    let (a, _) = split_train_test(&ds, 0.8, 9, SplitMode::Random).unwrap();
    let (b, _) = split_train_test(&ds, 0.8, 9, SplitMode::Random).unwrap();
    assert_eq!(a.split_labels().unwrap(), b.split_labels().unwrap());
    let (c, _) = split_train_test(&ds, 0.8, 10, SplitMode::Random).unwrap();
    assert_ne!(a.split_labels().unwrap(), c.split_labels().unwrap());
}

#[test]
fn standardize_z_scores_with_train_statistics_only() {
    let train = DMatrix::from_column_slice(4, 1, &[8.0, 12.0, 9.0, 11.0]); // mean 10, sd ~1.58
    let other = DMatrix::from_column_slice(1, 1, &[14.0]);
    let (std, train_s, others_s, constant) = standardize_fit_apply(&train, &[&other]).unwrap();
    assert!(constant.is_empty());
    let n = 4.0;
    let sd = ((4.0 + 4.0 + 1.0 + 1.0) / n as f64).sqrt();
    assert_abs_diff_eq!(others_s[0][(0, 0)], (14.0 - 10.0) / sd, epsilon = 1e-12);
    let mean_after: f64 = train_s.column(0).iter().sum::<f64>() / n;
    assert_abs_diff_eq!(mean_after, 0.0, epsilon = 1e-10);
    assert_eq!(std.mean[0], 10.0);
}

#[test]
fn constant_columns_pass_through_with_warning() {
    let mut train = DMatrix::zeros(5, 2);
    for i in 0..5 {
        train[(i, 0)] = i as f64;
        train[(i, 1)] = 42.0;
    }
    let (_, train_s, _, constant) = standardize_fit_apply(&train, &[]).unwrap();
    assert_eq!(constant, vec![1]);
    for i in 0..5 {
        assert_eq!(train_s[(i, 1)], 42.0);
    }
}

#[test]
fn kfold_partitions_with_balanced_sizes() {
    let folds = kfold_indices(8, 4, 1).unwrap();
    assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 2, 2]);

    let folds = kfold_indices(10, 4, 1).unwrap();
    assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 2, 2]);

    let mut all: Vec<usize> = folds.into_iter().flatten().collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());

    assert!(matches!(kfold_indices(3, 4, 1), Err(EvalError::TooFewRows { .. })));
}

#[test]
fn fold_statistics_ignore_validation_rows() {
    let ds = co_dataset(40, 5, 0.2);
    let x = design_matrix(&ds);
    let train_rows: Vec<usize> = (0..30).collect();
    let base = fold_standardizer(&x, &train_rows);

    // Corrupt every validation row; training-fold statistics must not move.
    let mut x2 = x.clone();
    for r in 30..40 {
        for c in 0..x2.ncols() {
            x2[(r, c)] = 1e9;
        }
    }
    let tampered = fold_standardizer(&x2, &train_rows);
    assert_eq!(base.mean, tampered.mean);
    assert_eq!(base.sd, tampered.sd);
}

#[test]
fn grid_with_one_candidate_selects_it() {
    let ds = co_dataset(40, 6, 0.3);
    let mut params = Params::new();
    params.insert("alpha".to_string(), "0.001".to_string());
    let grid = ParamGrid::singleton(&params);
    let (result, model) =
        grid_search(Family::Ridge, &grid, &ds, Phase::Alite, 4, 11).unwrap();
    assert_eq!(result.best_index, 0);
    assert_eq!(result.best_params.get("alpha").unwrap(), "0.001");
    assert_eq!(model.family, "ridge");
}

#[test]
fn grid_search_recovers_the_generalizing_penalty() {
    // The target is exactly linear in the features, so the tiny penalty
    // wins cross-validation against heavy shrinkage.
    let ds = co_dataset(60, 7, 0.05);
    let grid = ParamGrid::parse("alpha = 0.0001, 100, 1000000").unwrap();
    let (result, _) = grid_search(Family::Ridge, &grid, &ds, Phase::Alite, 4, 13).unwrap();
    assert_eq!(result.best_params.get("alpha").unwrap(), "0.0001");
    assert_eq!(result.scores.len(), 3);
    assert!(result.scores.iter().all(|s| s.error.is_none()));
}

#[test]
fn grid_search_is_deterministic_per_seed() {
    let ds = co_dataset(48, 8, 0.4);
    let grid = ParamGrid::parse("alpha = 0.001, 0.1, 10").unwrap();
    let (a, _) = grid_search(Family::Ridge, &grid, &ds, Phase::Alite, 4, 21).unwrap();
    let (b, _) = grid_search(Family::Ridge, &grid, &ds, Phase::Alite, 4, 21).unwrap();
    assert_eq!(a, b);
}

#[test]
fn failing_candidates_are_recorded_and_skipped() {
    let ds = co_dataset(30, 9, 0.2);
    let grid = ParamGrid::parse("alpha = abc, 0.01").unwrap();
    let (result, _) = grid_search(Family::Ridge, &grid, &ds, Phase::Alite, 3, 2).unwrap();
    assert!(result.scores[0].error.is_some());
    assert_eq!(result.best_index, 1);
}

#[test]
fn unknown_family_and_params_are_hard_errors() {
    assert!(matches!(Family::parse("boguenet"), Err(EvalError::UnknownFamily(_))));
    let ds = co_dataset(30, 10, 0.2);
    let x = design_matrix(&ds);
    let y = target_vector(&ds, Phase::Alite);
    let mut params = Params::new();
    params.insert("not_a_knob".to_string(), "3".to_string());
    assert!(matches!(
        fit_family(Family::Ridge, &params, &x, &y, 0),
        Err(EvalError::UnknownParam { .. })
    ));
}

#[test]
fn grid_file_parsing_handles_comments_and_products() {
    let text = "# ridge sweep\nalpha = 0.1, 1 # two values\n";
    let grid = ParamGrid::parse(text).unwrap();
    assert_eq!(grid.candidates().len(), 2);

    let text = "a = 1, 2\nb = x, y, z\n";
    let grid = ParamGrid::parse(text).unwrap();
    let cands = grid.candidates();
    assert_eq!(cands.len(), 6);
    assert_eq!(cands[0].get("a").unwrap(), "1");
    assert_eq!(cands[0].get("b").unwrap(), "x");
    assert_eq!(cands[5].get("a").unwrap(), "2");
    assert_eq!(cands[5].get("b").unwrap(), "z");
}

#[test]
fn evaluate_splits_reports_per_label_metrics() {
    let ds = co_dataset(50, 11, 0.2);
    let (labeled, _) = split_train_test(&ds, 0.8, 1, SplitMode::Random).unwrap();
    let train = labeled.filter_split(crate::datamodel::Split::Train);
    let model = train_model(Family::Lr, &Params::new(), &train, Phase::Alite, 0).unwrap();
    let report = evaluate_splits(&model, &labeled, Phase::Alite).unwrap();
    assert_eq!(report.len(), 2);
    let train_metrics = report.iter().find(|(s, _)| s == "train").unwrap();
    assert!(train_metrics.1.r2 > 0.99);
}
