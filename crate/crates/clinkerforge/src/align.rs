//! Temporal synchronization of the plant streams.
//!
//! Clinker rows are timestamped at production time; kiln feed, hot meal and
//! process parameters at measurement time. Joining them means walking back
//! through the material's residence: feed buffer, preheater tower, and the
//! clinker cooler, 37 minutes in total, plus a 20 minute sampling delay for
//! laboratory measurements.
//!
//! Low-frequency composition streams are joined latest-at-or-before the
//! offset-corrected instant (an XRF sample is a discrete lab measurement;
//! interpolating between two of them would fabricate compositions).
//! Process parameters are averaged over a window ending at the
//! offset-corrected production time under sample-and-hold weighting.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    AlignedSample, CompositionSample, DataError, Dataset, FeatureSetSpec, ProcessRecord, Stream,
    N_CO, N_FEATURES, N_HM, N_KF, N_PP, N_TARGETS,
};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no sample intersects the window ending at {end}")]
    EmptyWindow { end: DateTime<Utc> },
    #[error("stream must be sorted by timestamp (row {row})")]
    Unsorted { row: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Material transit durations between measurement points, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidenceSchedule {
    pub kf_buffer_min: i64,
    pub preheater_min: i64,
    pub cooler_min: i64,
    pub sampling_delay_min: i64,
}

impl Default for ResidenceSchedule {
    fn default() -> Self {
        ResidenceSchedule { kf_buffer_min: 1, preheater_min: 16, cooler_min: 20, sampling_delay_min: 20 }
    }
}

impl ResidenceSchedule {
    /// Feed-to-clinker transit: buffer + preheater + cooler.
    pub fn production_total(&self) -> Duration {
        Duration::minutes(self.kf_buffer_min + self.preheater_min + self.cooler_min)
    }

    /// Feed-to-lab-sample: production transit plus the sampling delay.
    pub fn measurement_total(&self) -> Duration {
        self.production_total() + Duration::minutes(self.sampling_delay_min)
    }

    /// Hot-meal-to-clinker lag. The hot meal sits at calciner exit, so the
    /// remaining transit is the cooler plus the feed-buffer margin. This is
    /// a declared constant, not a measured one.
    pub fn hm_lag(&self) -> Duration {
        Duration::minutes(self.cooler_min + self.kf_buffer_min)
    }

    pub fn zero() -> Self {
        ResidenceSchedule { kf_buffer_min: 0, preheater_min: 0, cooler_min: 0, sampling_delay_min: 0 }
    }
}

/// When the clinker made from feed measured at `kf_measured_at` leaves the
/// cooler.
pub fn production_time(kf_measured_at: DateTime<Utc>, sched: &ResidenceSchedule) -> DateTime<Utc> {
    kf_measured_at + sched.production_total()
}

/// When that clinker's laboratory sample is taken.
pub fn sample_time(kf_measured_at: DateTime<Utc>, sched: &ResidenceSchedule) -> DateTime<Utc> {
    kf_measured_at + sched.measurement_total()
}

/// Windowed aggregation policy for the high-frequency process stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub width_min: i64,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy { width_min: 120 }
    }
}

/// Time-weighted mean of each component over `[end - width, end)`.
///
/// Each sample holds from its own timestamp until the next sample
/// (sample-and-hold); its weight is the duration of that hold clipped to
/// the window. For a uniform cadence this reduces to the arithmetic mean.
/// Returns the per-component means and the covered duration in seconds; a
/// window is *complete* when the covered duration equals the window width.
pub fn window_average(
    stream: &[ProcessRecord],
    window_end: DateTime<Utc>,
    policy: &WindowPolicy,
) -> Result<(Vec<f64>, i64), AlignError> {
    let start = window_end - Duration::minutes(policy.width_min);
    let mut acc = vec![0.0; N_PP];
    let mut covered = 0i64;
    // First sample that can cover any of the window: the latest one at or
    // before `start`, else the earliest sample.
    let first = match stream.partition_point(|r| r.timestamp <= start) {
        0 => 0,
        p => p - 1,
    };
    for (i, rec) in stream.iter().enumerate().skip(first) {
        if rec.timestamp >= window_end {
            break;
        }
        let hold_end = stream.get(i + 1).map(|n| n.timestamp).unwrap_or(window_end);
        let lo = rec.timestamp.max(start);
        let hi = hold_end.min(window_end);
        if hi <= lo {
            continue;
        }
        let w = (hi - lo).num_seconds();
        covered += w;
        for (a, v) in acc.iter_mut().zip(rec.params.iter()) {
            *a += w as f64 * v;
        }
    }
    if covered == 0 {
        return Err(AlignError::EmptyWindow { end: window_end });
    }
    for a in acc.iter_mut() {
        *a /= covered as f64;
    }
    Ok((acc, covered))
}

/// One clinker row joined against the offset streams. Group slots are
/// `None` when that group has no complete partner.
#[derive(Debug, Clone)]
pub struct JoinedRow {
    pub clinker_timestamp: DateTime<Utc>,
    pub pp: Option<Vec<f64>>,
    pub kf: Option<Vec<f64>>,
    pub hm: Option<Vec<f64>>,
    pub co: Vec<f64>,
    pub targets: [f64; 3],
}

impl JoinedRow {
    pub fn is_complete(&self) -> bool {
        self.pp.is_some() && self.kf.is_some() && self.hm.is_some()
    }

    /// Flatten into the canonical 59-feature vector, `NaN` for missing
    /// groups.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(N_FEATURES);
        match &self.pp {
            Some(v) => f.extend_from_slice(v),
            None => f.extend(std::iter::repeat(f64::NAN).take(N_PP)),
        }
        match &self.kf {
            Some(v) => f.extend_from_slice(v),
            None => f.extend(std::iter::repeat(f64::NAN).take(N_KF)),
        }
        match &self.hm {
            Some(v) => f.extend_from_slice(v),
            None => f.extend(std::iter::repeat(f64::NAN).take(N_HM)),
        }
        f.extend_from_slice(&self.co);
        f
    }

    pub fn into_sample(self) -> AlignedSample {
        let features = self.features();
        AlignedSample { clinker_timestamp: self.clinker_timestamp, features, targets: self.targets }
    }
}

fn check_sorted<T, F: Fn(&T) -> DateTime<Utc>>(rows: &[T], key: F) -> Result<(), AlignError> {
    for i in 1..rows.len() {
        if key(&rows[i - 1]) > key(&rows[i]) {
            return Err(AlignError::Unsorted { row: i });
        }
    }
    Ok(())
}

fn latest_at_or_before(stream: &[CompositionSample], t: DateTime<Utc>) -> Option<&CompositionSample> {
    match stream.partition_point(|r| r.timestamp <= t) {
        0 => None,
        p => Some(&stream[p - 1]),
    }
}

/// Join every clinker row against the offset streams, keeping incomplete
/// rows with their missing groups marked. The staged cleaning protocol
/// accounts for those rows explicitly; [`build_aligned_dataset`] drops them.
pub fn join_all(
    db1: &[ProcessRecord],
    db2: &[CompositionSample],
    sched: &ResidenceSchedule,
    policy: &WindowPolicy,
) -> Result<Vec<JoinedRow>, AlignError> {
    check_sorted(db1, |r| r.timestamp)?;
    let kf: Vec<&CompositionSample> = db2.iter().filter(|s| s.stream == Stream::KilnFeed).collect();
    let hm: Vec<&CompositionSample> = db2.iter().filter(|s| s.stream == Stream::HotMeal).collect();
    let clinker: Vec<&CompositionSample> = db2.iter().filter(|s| s.stream == Stream::Clinker).collect();
    check_sorted(&kf, |r| r.timestamp)?;
    check_sorted(&hm, |r| r.timestamp)?;
    check_sorted(&clinker, |r| r.timestamp)?;
    let kf_owned: Vec<CompositionSample> = kf.into_iter().cloned().collect();
    let hm_owned: Vec<CompositionSample> = hm.into_iter().cloned().collect();

    let window_secs = policy.width_min * 60;
    let mut rows = Vec::with_capacity(clinker.len());
    for row in &clinker {
        let t = row.timestamp;
        let feed_time = t - sched.production_total();
        let pp = match window_average(db1, feed_time, policy) {
            Ok((mean, covered)) if covered == window_secs => Some(mean),
            _ => None,
        };
        let kf_row = latest_at_or_before(&kf_owned, feed_time).map(|s| s.values.clone());
        let hm_row = latest_at_or_before(&hm_owned, t - sched.hm_lag()).map(|s| s.values.clone());
        let mut targets = [0.0; 3];
        targets.copy_from_slice(&row.values[N_CO..N_CO + N_TARGETS]);
        rows.push(JoinedRow {
            clinker_timestamp: t,
            pp,
            kf: kf_row,
            hm: hm_row,
            co: row.values[..N_CO].to_vec(),
            targets,
        });
    }
    Ok(rows)
}

/// Write joined rows in the aligned CSV schema: timestamp, the 59 feature
/// columns, three targets. Missing groups become empty cells, so the
/// staged cleaning over the file sees exactly what the join produced.
pub fn write_joined_csv(path: &std::path::Path, rows: &[JoinedRow]) -> Result<(), AlignError> {
    let mut w = csv::Writer::from_path(path).map_err(DataError::Csv)?;
    let mut header = vec!["timestamp"];
    header.extend(crate::datamodel::full_feature_names());
    header.extend(["CLK_Alite", "CLK_Belite", "CLK_Ferrite"]);
    w.write_record(&header).map_err(DataError::Csv)?;
    for row in rows {
        let mut record =
            vec![row.clinker_timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)];
        for v in row.features() {
            record.push(if v.is_nan() { String::new() } else { format!("{v}") });
        }
        for v in row.targets {
            record.push(if v.is_nan() { String::new() } else { format!("{v}") });
        }
        w.write_record(&record).map_err(DataError::Csv)?;
    }
    w.flush().map_err(DataError::Io)?;
    Ok(())
}

/// Read joined rows back from the aligned CSV schema. A group whose cells
/// are all absent is treated as having had no join partner.
pub fn read_joined_csv(path: &std::path::Path) -> Result<Vec<JoinedRow>, AlignError> {
    let file = path.display().to_string();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(DataError::Csv)?;
    let mut header = vec!["timestamp"];
    header.extend(crate::datamodel::full_feature_names());
    header.extend(["CLK_Alite", "CLK_Belite", "CLK_Ferrite"]);
    let got: Vec<&str> = r.headers().map_err(DataError::Csv)?.iter().collect();
    if got != header {
        return Err(AlignError::Data(DataError::Format {
            file,
            msg: "header does not match the aligned schema".into(),
        }));
    }
    let parse_cell = |file: &str, s: &str| -> Result<f64, DataError> {
        if s.is_empty() {
            Ok(f64::NAN)
        } else {
            s.parse::<f64>().map_err(|e| DataError::Format {
                file: file.to_string(),
                msg: format!("bad number {s:?}: {e}"),
            })
        }
    };
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(DataError::Csv)?;
        let timestamp = chrono::DateTime::parse_from_rfc3339(&record[0])
            .map(|t| t.with_timezone(&chrono::Utc))
            .map_err(|e| DataError::Format { file: file.clone(), msg: format!("bad timestamp: {e}") })?;
        let cells: Vec<f64> = (1..record.len())
            .map(|i| parse_cell(&file, &record[i]))
            .collect::<Result<_, _>>()?;
        let group = |lo: usize, hi: usize| -> Option<Vec<f64>> {
            let slice = &cells[lo..hi];
            if slice.iter().all(|v| v.is_nan()) {
                None
            } else {
                Some(slice.to_vec())
            }
        };
        let mut targets = [0.0; 3];
        targets.copy_from_slice(&cells[N_FEATURES..N_FEATURES + N_TARGETS]);
        rows.push(JoinedRow {
            clinker_timestamp: timestamp,
            pp: group(0, N_PP),
            kf: group(N_PP, N_PP + N_KF),
            hm: group(N_PP + N_KF, N_PP + N_KF + N_HM),
            co: cells[N_PP + N_KF + N_HM..N_FEATURES].to_vec(),
            targets,
        });
    }
    Ok(rows)
}

/// Build the modeling dataset: one row per clinker observation with a
/// complete feature window in every group. Rows lacking any group are
/// dropped; the second return value counts them, so
/// `output rows + dropped == clinker rows`.
pub fn build_aligned_dataset(
    db1: &[ProcessRecord],
    db2: &[CompositionSample],
    sched: &ResidenceSchedule,
    policy: &WindowPolicy,
) -> Result<(Dataset, usize), AlignError> {
    let joined = join_all(db1, db2, sched, policy)?;
    let total = joined.len();
    let rows: Vec<AlignedSample> =
        joined.into_iter().filter(|r| r.is_complete()).map(|r| r.into_sample()).collect();
    let dropped = total - rows.len();
    let ds = Dataset::new(FeatureSetSpec::full(), rows)?;
    Ok((ds, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(min: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 1, 1, 8, 0, 0).unwrap() + Duration::minutes(min)
    }

    fn pp_row(min: i64, value: f64) -> ProcessRecord {
        ProcessRecord::new(ts(min), vec![value; 34]).unwrap()
    }

    fn comp(min: i64, stream: Stream, fill: f64) -> CompositionSample {
        CompositionSample::new(ts(min), stream, vec![fill; stream.n_values()]).unwrap()
    }

    #[test]
    fn production_time_adds_37_minutes() {
        let sched = ResidenceSchedule::default();
        assert_eq!(production_time(ts(0), &sched), ts(37));
        assert_eq!(sample_time(ts(0), &sched), ts(57));
        assert_eq!(production_time(ts(5), &ResidenceSchedule::zero()), ts(5));
    }

    #[test]
    fn schedule_totals_are_consistent() {
        let sched = ResidenceSchedule::default();
        assert_eq!(sched.production_total(), Duration::minutes(37));
        assert_eq!(sched.measurement_total(), Duration::minutes(57));
        assert_eq!(sched.hm_lag(), Duration::minutes(21));
    }

    #[test]
    fn window_average_of_constant_stream_is_constant() {
        let stream: Vec<ProcessRecord> = (0..240).map(|m| pp_row(m, 3.25)).collect();
        let (mean, covered) = window_average(&stream, ts(180), &WindowPolicy::default()).unwrap();
        assert_eq!(covered, 120 * 60);
        assert!(mean.iter().all(|v| (*v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn window_average_weights_by_covered_duration() {
        // One sample holds for the first 90 minutes of the window, the next
        // for the remaining 30: (90*10 + 30*20) / 120 = 12.5.
        let stream = vec![pp_row(-10, 10.0), pp_row(90, 20.0)];
        let (mean, covered) = window_average(&stream, ts(120), &WindowPolicy::default()).unwrap();
        assert_eq!(covered, 120 * 60);
        assert!((mean[0] - 12.5).abs() < 1e-12);
    }

    #[test]
    fn window_average_single_sample() {
        let stream = vec![pp_row(30, 7.0)];
        let (mean, covered) = window_average(&stream, ts(120), &WindowPolicy::default()).unwrap();
        assert!((mean[0] - 7.0).abs() < 1e-12);
        assert_eq!(covered, 90 * 60);
    }

    #[test]
    fn window_average_empty_window_errors() {
        let stream = vec![pp_row(300, 7.0)];
        assert!(matches!(
            window_average(&stream, ts(120), &WindowPolicy::default()),
            Err(AlignError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn kf_join_uses_latest_at_or_before() {
        // Clinker at 10:37 looks for feed measured at 10:00; rows exist at
        // 09:00 and 10:00, the 10:00 one wins.
        let db1: Vec<ProcessRecord> = (-200..200).map(|m| pp_row(m, 1.0)).collect();
        let db2 = vec![
            comp(0, Stream::HotMeal, 5.0),
            comp(60, Stream::KilnFeed, 1.0),
            comp(120, Stream::KilnFeed, 2.0),
            comp(157, Stream::Clinker, 9.0),
        ];
        let joined = join_all(&db1, &db2, &ResidenceSchedule::default(), &WindowPolicy::default()).unwrap();
        assert_eq!(joined.len(), 1);
        let kf = joined[0].kf.as_ref().unwrap();
        assert!((kf[0] - 2.0).abs() < 1e-12);
        assert!(joined[0].is_complete());
    }

    #[test]
    fn clinker_without_preceding_feed_is_dropped() {
        let db1: Vec<ProcessRecord> = (0..400).map(|m| pp_row(m, 1.0)).collect();
        let db2 = vec![
            // Production at minute 200: feed time 163 precedes every KF row.
            comp(200, Stream::Clinker, 1.0),
            comp(300, Stream::KilnFeed, 1.0),
            comp(300, Stream::HotMeal, 1.0),
        ];
        let (ds, dropped) =
            build_aligned_dataset(&db1, &db2, &ResidenceSchedule::default(), &WindowPolicy::default()).unwrap();
        assert_eq!(ds.len(), 0);
        assert_eq!(dropped, 1);
    }

    #[test]
    fn alignment_is_shift_equivariant() {
        let mk = |shift: i64| {
            let db1: Vec<ProcessRecord> =
                (0..420).map(|m| ProcessRecord::new(ts(m + shift), vec![(m % 17) as f64; 34]).unwrap()).collect();
            let mut db2 = Vec::new();
            for h in 0..7 {
                db2.push(CompositionSample::new(ts(h * 60 + shift), Stream::KilnFeed, vec![h as f64; 9]).unwrap());
            }
            for h in 0..4 {
                db2.push(CompositionSample::new(ts(h * 120 + shift), Stream::HotMeal, vec![h as f64; 7]).unwrap());
            }
            db2.push(CompositionSample::new(ts(360 + shift), Stream::Clinker, vec![42.0; 12]).unwrap());
            let (ds, dropped) =
                build_aligned_dataset(&db1, &db2, &ResidenceSchedule::default(), &WindowPolicy::default())
                    .unwrap();
            assert_eq!(dropped, 0);
            ds.rows()[0].features.clone()
        };
        let base = mk(0);
        for shift in [7, -13, 60 * 24] {
            assert_eq!(mk(shift), base, "shift {shift} changed aligned features");
        }
    }

    #[test]
    fn incomplete_pp_window_is_not_a_partner() {
        // Clinker at minute 60: PP window is [-97, 23) but PP starts at 0,
        // so coverage is partial and the row must drop.
        let db1: Vec<ProcessRecord> = (0..400).map(|m| pp_row(m, 1.0)).collect();
        let db2 = vec![
            comp(0, Stream::KilnFeed, 1.0),
            comp(0, Stream::HotMeal, 1.0),
            comp(60, Stream::Clinker, 1.0),
            comp(360, Stream::Clinker, 1.0),
        ];
        let (ds, dropped) =
            build_aligned_dataset(&db1, &db2, &ResidenceSchedule::default(), &WindowPolicy::default()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(dropped, 1);
    }
}
