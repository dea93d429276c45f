use super::*;
use chrono::TimeZone;

fn ts(minute: i64) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::minutes(minute)
}

fn clinker_means() -> Vec<f64> {
    CO_STATS.iter().chain(TARGET_STATS.iter()).map(|c| c.mean).collect()
}

fn full_row(minute: i64, fill: f64) -> AlignedSample {
    AlignedSample { clinker_timestamp: ts(minute), features: vec![fill; N_FEATURES], targets: [60.0, 15.0, 14.0] }
}

#[test]
fn expand_yields_15_distinct_specs() {
    let specs = expand_feature_sets();
    assert_eq!(specs.len(), 15);
    let mut seen = std::collections::HashSet::new();
    for s in &specs {
        assert!(!s.is_empty());
        assert!(seen.insert(s.label()));
    }
}

#[test]
fn expand_order_starts_with_pp_singleton() {
    let specs = expand_feature_sets();
    assert_eq!(specs[0], FeatureSetSpec::new(&[Group::Pp]));
    assert_eq!(specs[1].label(), "KF");
    assert_eq!(specs[4].label(), "PP+KF");
    assert_eq!(specs[14], FeatureSetSpec::full());
}

#[test]
fn seven_specs_enable_predictive_control() {
    let n = expand_feature_sets().iter().filter(|s| s.enables_predictive_control()).count();
    assert_eq!(n, 7);
}

#[test]
fn projection_identity_and_counts() {
    let rows: Vec<AlignedSample> = (0..4).map(|i| full_row(i, i as f64)).collect();
    let ds = Dataset::new(FeatureSetSpec::full(), rows).unwrap();

    let same = ds.project(FeatureSetSpec::full()).unwrap();
    assert_eq!(same, ds);
    assert_eq!(same.rows()[0].features.len(), 59);

    let co = ds.project(FeatureSetSpec::new(&[Group::Co])).unwrap();
    assert_eq!(co.rows()[0].features.len(), 9);
    assert_eq!(co.feature_names()[0], "CLK_CaO");

    let kf_pp = ds.project(FeatureSetSpec::new(&[Group::Kf, Group::Pp])).unwrap();
    assert_eq!(kf_pp.rows()[0].features.len(), 43);
    // Targets and order survive projection.
    assert_eq!(kf_pp.rows()[2].targets, ds.rows()[2].targets);
    assert_eq!(kf_pp.rows()[3].clinker_timestamp, ds.rows()[3].clinker_timestamp);
}

#[test]
fn projection_composes() {
    let rows: Vec<AlignedSample> = (0..6)
        .map(|i| {
            let features = (0..N_FEATURES).map(|j| (i * 100 + j) as f64).collect();
            AlignedSample { clinker_timestamp: ts(i as i64), features, targets: [1.0, 2.0, 3.0] }
        })
        .collect();
    let ds = Dataset::new(FeatureSetSpec::full(), rows).unwrap();
    let mid = ds.project(FeatureSetSpec::new(&[Group::Pp, Group::Kf, Group::Co])).unwrap();
    let sub = FeatureSetSpec::new(&[Group::Kf, Group::Co]);
    assert_eq!(mid.project(sub).unwrap(), ds.project(sub).unwrap());
}

#[test]
fn empty_spec_is_rejected() {
    let ds = Dataset::new(FeatureSetSpec::full(), vec![full_row(0, 0.0)]).unwrap();
    assert!(matches!(ds.project(FeatureSetSpec::new(&[])), Err(DataError::EmptySpec)));
}

#[test]
fn validate_flags_negative_chloride() {
    let mut values = clinker_means();
    values[8] = -0.01; // CLK_Cl
    let sample = CompositionSample::new(ts(0), Stream::Clinker, values).unwrap();
    let verdict = validate_sample(&sample);
    assert_eq!(verdict.violations.len(), 1);
    assert!(matches!(verdict.violations[0], Violation::NegativeValue { ref name, .. } if name == "CLK_Cl"));
}

#[test]
fn validate_passes_reference_means() {
    let sample = CompositionSample::new(ts(0), Stream::Clinker, clinker_means()).unwrap();
    let (sample, verdict) = sample.with_validation();
    assert!(verdict.is_valid(), "{verdict:?}");
    assert!(sample.validated);
}

#[test]
fn validate_flags_phase_sum_above_100() {
    let mut values = clinker_means();
    values[9] = 60.0;
    values[10] = 41.0;
    values[11] = 14.0;
    let sample = CompositionSample::new(ts(0), Stream::Clinker, values).unwrap();
    let verdict = validate_sample(&sample);
    assert!(verdict
        .violations
        .iter()
        .any(|v| matches!(v, Violation::PhaseSumExceeded { sum } if (*sum - 115.0).abs() < 1e-9)));
}

#[test]
fn validation_survives_serde_round_trip() {
    let sample = CompositionSample::new(ts(5), Stream::KilnFeed, KF_STATS.map(|c| c.mean).to_vec()).unwrap();
    assert!(validate_sample(&sample).is_valid());
    let json = serde_json::to_string(&sample).unwrap();
    let back: CompositionSample = serde_json::from_str(&json).unwrap();
    assert!(validate_sample(&back).is_valid());
    assert_eq!(back, sample);
}

#[test]
fn negative_pressure_is_in_range() {
    let mut params: Vec<f64> = PP_RANGES.iter().map(|r| (r.lo + r.hi) / 2.0).collect();
    params[25] = -30.0; // P26, admissible range -50..5 mbar
    let record = ProcessRecord::new(ts(0), params).unwrap();
    assert!(record.validate().is_valid());
}

#[test]
fn out_of_range_param_is_flagged() {
    let mut params: Vec<f64> = PP_RANGES.iter().map(|r| (r.lo + r.hi) / 2.0).collect();
    params[12] = 400.0; // P13 admissible range starts at 700
    let record = ProcessRecord::new(ts(0), params).unwrap();
    let verdict = record.validate();
    assert!(matches!(verdict.violations[0], Violation::OutOfRange { ref name, .. } if name == "P13"));
}

#[test]
fn dataset_rejects_non_monotonic_timestamps() {
    let rows = vec![full_row(1, 0.0), full_row(1, 1.0)];
    assert!(matches!(
        Dataset::new(FeatureSetSpec::full(), rows),
        Err(DataError::NonMonotonic { row: 1 })
    ));
}

#[test]
fn csv_round_trip_preserves_aligned_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("aligned.csv");
    let mut rows: Vec<AlignedSample> = (0..5).map(|i| full_row(i, 0.25 * i as f64 + 0.1)).collect();
    rows[2].features[7] = f64::NAN; // absent cell survives the trip
    let ds = Dataset::new(FeatureSetSpec::full(), rows).unwrap();
    csv_io::write_aligned(&path, &ds).unwrap();
    let back = csv_io::read_aligned(&path).unwrap();
    assert_eq!(back.len(), ds.len());
    assert!(back.rows()[2].features[7].is_nan());
    assert_eq!(back.rows()[4].features, ds.rows()[4].features);
    assert_eq!(back.spec(), ds.spec());
}

#[test]
fn csv_round_trip_with_split_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.csv");
    let rows: Vec<AlignedSample> = (0..4).map(|i| full_row(i, i as f64)).collect();
    let ds = Dataset::new(FeatureSetSpec::full(), rows)
        .unwrap()
        .with_labels(vec![Split::Train, Split::Train, Split::Test, Split::Holdout])
        .unwrap();
    csv_io::write_aligned(&path, &ds).unwrap();
    let back = csv_io::read_aligned(&path).unwrap();
    assert_eq!(back.split_labels().unwrap(), ds.split_labels().unwrap());
}
