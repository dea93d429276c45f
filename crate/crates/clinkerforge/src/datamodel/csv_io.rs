//! CSV readers and writers for the raw plant streams and aligned datasets.
//!
//! All files are UTF-8 with a header row and an ISO-8601 UTC timestamp in
//! the first column. Absent measurements are empty fields and round-trip
//! as `NaN` in memory. Floats are written with the shortest notation that
//! parses back to the same bits, so identical data produces byte-identical
//! files.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use super::{
    full_feature_names, AlignedSample, CompositionSample, DataError, Dataset, FeatureSetSpec,
    ProcessRecord, Split, Stream, N_FEATURES, N_TARGETS, PP_NAMES,
};

fn parse_timestamp(file: &str, s: &str) -> Result<DateTime<Utc>, DataError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| DataError::Format { file: file.to_string(), msg: format!("bad timestamp {s:?}: {e}") })
}

fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_cell(file: &str, s: &str) -> Result<f64, DataError> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|e| DataError::Format { file: file.to_string(), msg: format!("bad number {s:?}: {e}") })
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn check_header(file: &str, got: &csv::StringRecord, want: &[&str]) -> Result<(), DataError> {
    let got: Vec<&str> = got.iter().collect();
    if got != want {
        return Err(DataError::Format {
            file: file.to_string(),
            msg: format!("unexpected header: got {got:?}, want {want:?}"),
        });
    }
    Ok(())
}

pub fn write_process_records(path: &Path, rows: &[ProcessRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp"];
    header.extend(PP_NAMES);
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![format_timestamp(row.timestamp)];
        record.extend(row.params.iter().map(|v| format_cell(*v)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_process_records(path: &Path) -> Result<Vec<ProcessRecord>, DataError> {
    let file = path.display().to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut header = vec!["timestamp"];
    header.extend(PP_NAMES);
    check_header(&file, r.headers()?, &header)?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let timestamp = parse_timestamp(&file, &record[0])?;
        let params = record
            .iter()
            .skip(1)
            .map(|s| parse_cell(&file, s))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(ProcessRecord::new(timestamp, params)?);
    }
    Ok(rows)
}

pub fn write_compositions(path: &Path, stream: Stream, rows: &[CompositionSample]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp"];
    header.extend(stream.schema());
    w.write_record(&header)?;
    for row in rows {
        debug_assert_eq!(row.stream, stream);
        let mut record = vec![format_timestamp(row.timestamp)];
        record.extend(row.values.iter().map(|v| format_cell(*v)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_compositions(path: &Path, stream: Stream) -> Result<Vec<CompositionSample>, DataError> {
    let file = path.display().to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut header = vec!["timestamp"];
    header.extend(stream.schema());
    check_header(&file, r.headers()?, &header)?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let timestamp = parse_timestamp(&file, &record[0])?;
        let values = record
            .iter()
            .skip(1)
            .map(|s| parse_cell(&file, s))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(CompositionSample::new(timestamp, stream, values)?);
    }
    Ok(rows)
}

/// Write an aligned dataset: timestamp, the spec's feature columns, the
/// three targets, and a trailing `split` column when labels are present.
pub fn write_aligned(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp"];
    header.extend(ds.feature_names());
    header.extend(["CLK_Alite", "CLK_Belite", "CLK_Ferrite"]);
    if ds.split_labels().is_some() {
        header.push("split");
    }
    w.write_record(&header)?;
    for (i, row) in ds.rows().iter().enumerate() {
        let mut record = vec![format_timestamp(row.clinker_timestamp)];
        record.extend(row.features.iter().map(|v| format_cell(*v)));
        record.extend(row.targets.iter().map(|v| format_cell(*v)));
        if let Some(labels) = ds.split_labels() {
            record.push(labels[i].name().to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an aligned dataset written by [`write_aligned`]. The feature-set
/// spec is inferred from the header; a trailing `split` column is optional.
pub fn read_aligned(path: &Path) -> Result<Dataset, DataError> {
    let file = path.display().to_string();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    if header.first().map(String::as_str) != Some("timestamp") {
        return Err(DataError::Format { file, msg: "first column must be `timestamp`".into() });
    }
    let has_split = header.last().map(String::as_str) == Some("split");
    let feature_cols = header.len() - 1 - N_TARGETS - usize::from(has_split);
    let feature_names: Vec<&str> = header[1..1 + feature_cols].iter().map(String::as_str).collect();
    let spec = infer_spec(&file, &feature_names)?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for record in r.records() {
        let record = record?;
        let timestamp = parse_timestamp(&file, &record[0])?;
        let features = (1..1 + feature_cols)
            .map(|i| parse_cell(&file, &record[i]))
            .collect::<Result<Vec<_>, _>>()?;
        let mut targets = [0.0; 3];
        for (k, t) in targets.iter_mut().enumerate() {
            *t = parse_cell(&file, &record[1 + feature_cols + k])?;
        }
        if has_split {
            let s = &record[header.len() - 1];
            labels.push(Split::parse(s).ok_or_else(|| DataError::Format {
                file: file.clone(),
                msg: format!("bad split label {s:?}"),
            })?);
        }
        rows.push(AlignedSample { clinker_timestamp: timestamp, features, targets });
    }
    let ds = Dataset::new(spec, rows)?;
    if has_split {
        ds.with_labels(labels)
    } else {
        Ok(ds)
    }
}

/// Match a header's feature columns against the canonical group layout.
fn infer_spec(file: &str, feature_names: &[&str]) -> Result<FeatureSetSpec, DataError> {
    let full = full_feature_names();
    for spec in super::expand_feature_sets() {
        let expected: Vec<&str> = spec.column_indices().into_iter().map(|i| full[i]).collect();
        if expected == feature_names {
            return Ok(spec);
        }
    }
    Err(DataError::Format {
        file: file.to_string(),
        msg: format!("feature columns do not match any canonical group subset ({} columns)", feature_names.len()),
    })
}

/// Convenience bundle of the four raw stream files in one directory.
pub struct RawPaths {
    pub pp: std::path::PathBuf,
    pub kf: std::path::PathBuf,
    pub hm: std::path::PathBuf,
    pub clinker: std::path::PathBuf,
}

impl RawPaths {
    pub fn in_dir(dir: &Path) -> RawPaths {
        RawPaths {
            pp: dir.join("pp.csv"),
            kf: dir.join("kf.csv"),
            hm: dir.join("hm.csv"),
            clinker: dir.join("clinker.csv"),
        }
    }
}

pub fn full_width() -> usize {
    N_FEATURES + N_TARGETS
}
