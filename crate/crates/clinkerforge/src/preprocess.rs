//! Staged cleaning protocol with loss accounting.
//!
//! Five stages run in a fixed order, each reporting how many clinker rows
//! it removed: stream matching, duplicate consolidation, completeness,
//! negative compositions, and percentile filtering. The clinker row is the
//! accounting unit throughout, so `raw − Σ removed = final` holds exactly.
//!
//! Negative-value removal applies to composition columns only; several
//! process parameters are pressures with physically negative ranges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{self, AlignError, JoinedRow, ResidenceSchedule, WindowPolicy};
use crate::datamodel::{
    AlignedSample, CompositionSample, DataError, Dataset, FeatureSetSpec, ProcessRecord, N_PP,
    N_TARGETS,
};

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("dataset is empty")]
    EmptyInput,
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Default percentile levels: keep the 0.01–99.99 band.
pub const PERCENTILE_LO: f64 = 0.0001;
pub const PERCENTILE_HI: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub removed: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnBounds {
    pub column: String,
    pub lo: f64,
    pub hi: f64,
    /// Constant column: the bounds collapse and the column passes trivially.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub raw_rows: usize,
    pub stages: Vec<StageReport>,
    /// Individual negative cells seen by the negative-composition stage;
    /// row and cell counts differ whenever a row has several bad entries,
    /// so both are reported.
    pub negative_cells: usize,
    /// Duplicate timestamps whose payloads disagreed; the first row wins.
    pub dedupe_conflicts: usize,
    pub percentile_bounds: Vec<ColumnBounds>,
}

impl CleaningReport {
    pub fn final_rows(&self) -> usize {
        self.stages.last().map(|s| s.remaining).unwrap_or(self.raw_rows)
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// `raw − Σ removed == final`, and each stage's remaining count chains
    /// from the previous one.
    pub fn accounting_holds(&self) -> bool {
        let mut remaining = self.raw_rows;
        for stage in &self.stages {
            if stage.remaining != remaining - stage.removed {
                return false;
            }
            remaining = stage.remaining;
        }
        let total_removed: usize = self.stages.iter().map(|s| s.removed).sum();
        self.raw_rows - total_removed == self.final_rows()
    }
}

pub const STAGE_MATCH: &str = "match_streams";
pub const STAGE_DEDUPE: &str = "dedupe";
pub const STAGE_INCOMPLETE: &str = "drop_incomplete";
pub const STAGE_NEGATIVE: &str = "drop_negative";
pub const STAGE_PERCENTILE: &str = "percentile_filter";

// ---------------------------------------------------------------------------
// Individual stages
// ---------------------------------------------------------------------------

/// Remove joined rows lacking a complete partner in any required group.
pub fn drop_unmatched(joined: Vec<JoinedRow>) -> (Vec<JoinedRow>, usize) {
    let before = joined.len();
    let kept: Vec<JoinedRow> = joined.into_iter().filter(|r| r.is_complete()).collect();
    let removed = before - kept.len();
    (kept, removed)
}

fn payload_bits(row: &JoinedRow) -> Vec<u64> {
    let mut bits: Vec<u64> = row.features().iter().map(|v| v.to_bits()).collect();
    bits.extend(row.targets.iter().map(|v| v.to_bits()));
    bits
}

/// Collapse rows sharing a timestamp, keeping the first occurrence. Exact
/// duplicates collapse silently; conflicting payloads are counted.
/// Comparison is bitwise so absent cells compare equal to themselves.
pub fn dedupe_joined(rows: Vec<JoinedRow>) -> (Vec<JoinedRow>, usize, usize) {
    let mut kept: Vec<JoinedRow> = Vec::with_capacity(rows.len());
    let mut removed = 0;
    let mut conflicts = 0;
    for row in rows {
        match kept.last() {
            Some(prev) if prev.clinker_timestamp == row.clinker_timestamp => {
                if payload_bits(prev) != payload_bits(&row) {
                    conflicts += 1;
                }
                removed += 1;
            }
            _ => kept.push(row),
        }
    }
    (kept, removed, conflicts)
}

/// Timestamp-keyed dedupe for a raw composition stream.
pub fn dedupe_compositions(rows: Vec<CompositionSample>) -> (Vec<CompositionSample>, usize, usize) {
    let mut kept: Vec<CompositionSample> = Vec::with_capacity(rows.len());
    let mut removed = 0;
    let mut conflicts = 0;
    for row in rows {
        match kept.last() {
            Some(prev) if prev.timestamp == row.timestamp && prev.stream == row.stream => {
                let same = prev.values.len() == row.values.len()
                    && prev.values.iter().zip(row.values.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    conflicts += 1;
                }
                removed += 1;
            }
            _ => kept.push(row),
        }
    }
    (kept, removed, conflicts)
}

/// Remove rows with any absent cell among the features and targets.
pub fn drop_incomplete(rows: Vec<AlignedSample>) -> (Vec<AlignedSample>, usize) {
    let before = rows.len();
    let kept: Vec<AlignedSample> = rows
        .into_iter()
        .filter(|r| r.features.iter().all(|v| !v.is_nan()) && r.targets.iter().all(|v| !v.is_nan()))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

fn composition_cells(row: &AlignedSample, pp_width: usize) -> impl Iterator<Item = f64> + '_ {
    row.features[pp_width..].iter().copied().chain(row.targets.iter().copied())
}

/// Remove rows with any negative composition cell. Process parameters are
/// exempt: several are pressures with admissible negative ranges. Also
/// returns the count of individual negative cells.
pub fn drop_negative(rows: Vec<AlignedSample>) -> (Vec<AlignedSample>, usize, usize) {
    drop_negative_with_pp_width(rows, N_PP)
}

fn drop_negative_with_pp_width(
    rows: Vec<AlignedSample>,
    pp_width: usize,
) -> (Vec<AlignedSample>, usize, usize) {
    let before = rows.len();
    let mut cells = 0;
    for row in &rows {
        cells += composition_cells(row, pp_width).filter(|v| *v < 0.0).count();
    }
    let kept: Vec<AlignedSample> =
        rows.into_iter().filter(|r| !composition_cells(r, pp_width).any(|v| v < 0.0)).collect();
    let removed = before - kept.len();
    (kept, removed, cells)
}

/// Empirical quantile with the `h = p(n+1)` plotting position, linearly
/// interpolated between order statistics and clamped to the data range.
/// With this convention the bounds coincide with the extremes until the
/// sample is large enough to resolve the requested tail (n ≥ 1/p), which
/// keeps the filter inert on small samples and idempotent after one pass
/// at desk scale.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty slice");
    let h = p * (n as f64 + 1.0);
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let k = h.floor() as usize; // 1-based lower order statistic
    let frac = h - k as f64;
    sorted[k - 1] + frac * (sorted[k] - sorted[k - 1])
}

/// Compute per-column `[lo, hi]` percentile bounds on the input and remove
/// rows with any value strictly outside its column's bounds. Bounds are
/// reported for audit. Absent cells are ignored (the completeness stage
/// owns them).
pub fn percentile_filter(
    rows: Vec<AlignedSample>,
    feature_names: &[&str],
    lo: f64,
    hi: f64,
) -> Result<(Vec<AlignedSample>, usize, Vec<ColumnBounds>), CleanError> {
    if rows.is_empty() {
        return Err(CleanError::EmptyInput);
    }
    let n_features = rows[0].features.len();
    let n_cols = n_features + N_TARGETS;
    let target_names = ["CLK_Alite", "CLK_Belite", "CLK_Ferrite"];
    let mut bounds = Vec::with_capacity(n_cols);
    for c in 0..n_cols {
        let mut column: Vec<f64> = rows
            .iter()
            .map(|r| if c < n_features { r.features[c] } else { r.targets[c - n_features] })
            .filter(|v| !v.is_nan())
            .collect();
        let name = if c < n_features {
            feature_names[c].to_string()
        } else {
            target_names[c - n_features].to_string()
        };
        if column.is_empty() {
            bounds.push(ColumnBounds { column: name, lo: f64::NAN, hi: f64::NAN, degenerate: true });
            continue;
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let b_lo = quantile(&column, lo);
        let b_hi = quantile(&column, hi);
        bounds.push(ColumnBounds { column: name, lo: b_lo, hi: b_hi, degenerate: b_lo == b_hi });
    }
    let before = rows.len();
    let kept: Vec<AlignedSample> = rows
        .into_iter()
        .filter(|r| {
            (0..n_cols).all(|c| {
                let v = if c < n_features { r.features[c] } else { r.targets[c - n_features] };
                let b = &bounds[c];
                v.is_nan() || b.degenerate || (v >= b.lo && v <= b.hi)
            })
        })
        .collect();
    let removed = before - kept.len();
    Ok((kept, removed, bounds))
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Run the five stages over joined rows and assemble the report.
pub fn clean_joined(
    joined: Vec<JoinedRow>,
    lo: f64,
    hi: f64,
) -> Result<(Dataset, CleaningReport), CleanError> {
    let raw_rows = joined.len();
    let mut stages = Vec::with_capacity(5);

    let (joined, removed) = drop_unmatched(joined);
    stages.push(StageReport { name: STAGE_MATCH.into(), removed, remaining: joined.len() });

    let (joined, removed, conflicts) = dedupe_joined(joined);
    stages.push(StageReport { name: STAGE_DEDUPE.into(), removed, remaining: joined.len() });

    let rows: Vec<AlignedSample> = joined.into_iter().map(|r| r.into_sample()).collect();
    let (rows, removed) = drop_incomplete(rows);
    stages.push(StageReport { name: STAGE_INCOMPLETE.into(), removed, remaining: rows.len() });

    let (rows, removed, negative_cells) = drop_negative(rows);
    stages.push(StageReport { name: STAGE_NEGATIVE.into(), removed, remaining: rows.len() });

    let names = FeatureSetSpec::full().feature_names();
    let (rows, removed, percentile_bounds) = percentile_filter(rows, &names, lo, hi)?;
    stages.push(StageReport { name: STAGE_PERCENTILE.into(), removed, remaining: rows.len() });

    let ds = Dataset::new(FeatureSetSpec::full(), rows)?;
    let report = CleaningReport {
        raw_rows,
        stages,
        negative_cells,
        dedupe_conflicts: conflicts,
        percentile_bounds,
    };
    debug_assert!(report.accounting_holds());
    Ok((ds, report))
}

/// Join the raw streams and clean: the one-call pipeline.
pub fn run_pipeline(
    db1: &[ProcessRecord],
    db2: &[CompositionSample],
    sched: &ResidenceSchedule,
    policy: &WindowPolicy,
    lo: f64,
    hi: f64,
) -> Result<(Dataset, CleaningReport), CleanError> {
    let joined = align::join_all(db1, db2, sched, policy)?;
    clean_joined(joined, lo, hi)
}

/// Re-clean an already-built dataset (e.g. a second pass over clean.csv).
/// Rows are complete by construction, so the matching and dedupe stages
/// only see work if the file was edited by hand.
pub fn clean_dataset(ds: &Dataset, lo: f64, hi: f64) -> Result<(Dataset, CleaningReport), CleanError> {
    let spec = ds.spec();
    let raw_rows = ds.len();
    let mut stages = Vec::with_capacity(5);
    let rows: Vec<AlignedSample> = ds.rows().to_vec();

    // A row is unmatched when one of its groups is entirely absent.
    let group_spans: Vec<(usize, usize)> = {
        let mut spans = Vec::new();
        let mut offset = 0;
        for g in spec.groups() {
            spans.push((offset, offset + g.width()));
            offset += g.width();
        }
        spans
    };
    let before = rows.len();
    let rows: Vec<AlignedSample> = rows
        .into_iter()
        .filter(|r| {
            group_spans.iter().all(|(lo_i, hi_i)| r.features[*lo_i..*hi_i].iter().any(|v| !v.is_nan()))
        })
        .collect();
    stages.push(StageReport { name: STAGE_MATCH.into(), removed: before - rows.len(), remaining: rows.len() });

    let before = rows.len();
    let mut deduped: Vec<AlignedSample> = Vec::with_capacity(rows.len());
    let mut conflicts = 0;
    for row in rows {
        match deduped.last() {
            Some(prev) if prev.clinker_timestamp == row.clinker_timestamp => {
                let same = prev
                    .features
                    .iter()
                    .zip(row.features.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
                    && prev.targets.iter().zip(row.targets.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    conflicts += 1;
                }
            }
            _ => deduped.push(row),
        }
    }
    let rows = deduped;
    stages.push(StageReport { name: STAGE_DEDUPE.into(), removed: before - rows.len(), remaining: rows.len() });

    let (rows, removed) = drop_incomplete(rows);
    stages.push(StageReport { name: STAGE_INCOMPLETE.into(), removed, remaining: rows.len() });

    let pp_width = if spec.contains(crate::datamodel::Group::Pp) { N_PP } else { 0 };
    let (rows, removed, negative_cells) = drop_negative_with_pp_width(rows, pp_width);
    stages.push(StageReport { name: STAGE_NEGATIVE.into(), removed, remaining: rows.len() });

    let names = spec.feature_names();
    let (rows, removed, percentile_bounds) = percentile_filter(rows, &names, lo, hi)?;
    stages.push(StageReport { name: STAGE_PERCENTILE.into(), removed, remaining: rows.len() });

    let out = Dataset::new(spec, rows)?;
    let report = CleaningReport {
        raw_rows,
        stages,
        negative_cells,
        dedupe_conflicts: conflicts,
        percentile_bounds,
    };
    debug_assert!(report.accounting_holds());
    Ok((out, report))
}
