//! Shared domain types, feature-set algebra, and physical validation.

pub mod csv_io;
pub mod schema;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schema::{
    full_feature_names, ColumnStat, CO_STATS, HM_STATS, KF_STATS, N_CO, N_FEATURES, N_HM, N_KF,
    N_PP, N_TARGETS, PP_NAMES, PP_RANGES, TARGET_STATS,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{file}: {msg}")]
    Format { file: String, msg: String },
    #[error("feature set has no groups")]
    EmptySpec,
    #[error("dataset lacks required groups: {0:?}")]
    MissingGroups(Vec<Group>),
    #[error("expected {expected} values for {context}, got {got}")]
    Length { context: &'static str, expected: usize, got: usize },
    #[error("timestamps must be strictly increasing (row {row})")]
    NonMonotonic { row: usize },
    #[error("split labels must cover every row ({labels} labels for {rows} rows)")]
    LabelCoverage { labels: usize, rows: usize },
}

/// Material stream a composition sample was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    KilnFeed,
    HotMeal,
    Clinker,
}

impl Stream {
    /// Column names of this stream's composition schema, in canonical order.
    pub fn schema(self) -> Vec<&'static str> {
        match self {
            Stream::KilnFeed => schema::kf_names(),
            Stream::HotMeal => schema::hm_names(),
            Stream::Clinker => {
                let mut names = schema::co_names();
                names.extend(schema::target_names());
                names
            }
        }
    }

    pub fn n_values(self) -> usize {
        match self {
            Stream::KilnFeed => N_KF,
            Stream::HotMeal => N_HM,
            Stream::Clinker => N_CO + N_TARGETS,
        }
    }
}

/// Predicted clinker mineral phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Alite,
    Belite,
    Ferrite,
}

pub const PHASES: [Phase; 3] = [Phase::Alite, Phase::Belite, Phase::Ferrite];

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::Alite => 0,
            Phase::Belite => 1,
            Phase::Ferrite => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Alite => "alite",
            Phase::Belite => "belite",
            Phase::Ferrite => "ferrite",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s.to_ascii_lowercase().as_str() {
            "alite" => Some(Phase::Alite),
            "belite" => Some(Phase::Belite),
            "ferrite" => Some(Phase::Ferrite),
            _ => None,
        }
    }
}

/// One timestamped row of the 34 online process parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessRecord {
    pub timestamp: DateTime<Utc>,
    /// P1..P34 in canonical order. `NaN` marks an absent measurement.
    pub params: Vec<f64>,
    pub validated: bool,
}

impl ProcessRecord {
    pub fn new(timestamp: DateTime<Utc>, params: Vec<f64>) -> Result<Self, DataError> {
        if params.len() != N_PP {
            return Err(DataError::Length { context: "process record", expected: N_PP, got: params.len() });
        }
        Ok(ProcessRecord { timestamp, params, validated: false })
    }

    /// Check each parameter against its admissible range.
    pub fn validate(&self) -> ValidationVerdict {
        let mut violations = Vec::new();
        for (value, range) in self.params.iter().zip(PP_RANGES.iter()) {
            if value.is_nan() {
                violations.push(Violation::MissingValue { name: range.name.to_string() });
            } else if *value < range.lo || *value > range.hi {
                violations.push(Violation::OutOfRange {
                    name: range.name.to_string(),
                    value: *value,
                    lo: range.lo,
                    hi: range.hi,
                });
            }
        }
        ValidationVerdict { violations }
    }

    pub fn with_validation(mut self) -> (Self, ValidationVerdict) {
        let verdict = self.validate();
        self.validated = verdict.is_valid();
        (self, verdict)
    }
}

/// Timestamped oxide / phase weight-percent vector for one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSample {
    pub timestamp: DateTime<Utc>,
    pub stream: Stream,
    /// Values in the stream's canonical schema order. `NaN` marks an absent
    /// measurement.
    pub values: Vec<f64>,
    pub validated: bool,
}

impl CompositionSample {
    pub fn new(timestamp: DateTime<Utc>, stream: Stream, values: Vec<f64>) -> Result<Self, DataError> {
        if values.len() != stream.n_values() {
            return Err(DataError::Length { context: "composition sample", expected: stream.n_values(), got: values.len() });
        }
        Ok(CompositionSample { timestamp, stream, values, validated: false })
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.stream.schema().iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

/// A single violated physical-consistency rule. Violations are data, not
/// errors: a sample carrying violations is still representable, it just
/// never gets the `validated` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    SchemaMismatch { expected: usize, got: usize },
    MissingValue { name: String },
    NegativeValue { name: String, value: f64 },
    PhaseSumExceeded { sum: f64 },
    OutOfRange { name: String, value: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub violations: Vec<Violation>,
}

impl ValidationVerdict {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a composition sample against its stream schema and the physical
/// constraints: no negative entries, and for clinker a phase sum of at most
/// 100 wt.% (minor phases are unmeasured, so there is no lower bound).
pub fn validate_sample(sample: &CompositionSample) -> ValidationVerdict {
    let mut violations = Vec::new();
    let expected = sample.stream.n_values();
    if sample.values.len() != expected {
        violations.push(Violation::SchemaMismatch { expected, got: sample.values.len() });
        return ValidationVerdict { violations };
    }
    let names = sample.stream.schema();
    for (value, name) in sample.values.iter().zip(names.iter()) {
        if value.is_nan() {
            violations.push(Violation::MissingValue { name: name.to_string() });
        } else if *value < 0.0 {
            violations.push(Violation::NegativeValue { name: name.to_string(), value: *value });
        }
    }
    if sample.stream == Stream::Clinker {
        let sum: f64 = sample.values[N_CO..].iter().sum();
        if sum > 100.0 {
            violations.push(Violation::PhaseSumExceeded { sum });
        }
    }
    ValidationVerdict { violations }
}

impl CompositionSample {
    pub fn with_validation(mut self) -> (Self, ValidationVerdict) {
        let verdict = validate_sample(&self);
        self.validated = verdict.is_valid();
        (self, verdict)
    }
}

/// One of the four input feature groups, in canonical (plant-flow) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Pp,
    Kf,
    Hm,
    Co,
}

pub const GROUPS: [Group; 4] = [Group::Pp, Group::Kf, Group::Hm, Group::Co];

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Pp => "PP",
            Group::Kf => "KF",
            Group::Hm => "HM",
            Group::Co => "CO",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Group::Pp => N_PP,
            Group::Kf => N_KF,
            Group::Hm => N_HM,
            Group::Co => N_CO,
        }
    }

    /// Column offset of this group inside the full 59-feature vector.
    pub fn offset(self) -> usize {
        match self {
            Group::Pp => 0,
            Group::Kf => N_PP,
            Group::Hm => N_PP + N_KF,
            Group::Co => N_PP + N_KF + N_HM,
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        match s.to_ascii_uppercase().as_str() {
            "PP" => Some(Group::Pp),
            "KF" => Some(Group::Kf),
            "HM" => Some(Group::Hm),
            "CO" => Some(Group::Co),
            _ => None,
        }
    }
}

/// A subset of the four feature groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    mask: u8,
}

impl FeatureSetSpec {
    pub fn new(groups: &[Group]) -> Self {
        let mut mask = 0u8;
        for g in groups {
            mask |= 1 << (*g as u8);
        }
        FeatureSetSpec { mask }
    }

    pub fn full() -> Self {
        FeatureSetSpec::new(&GROUPS)
    }

    pub fn contains(&self, group: Group) -> bool {
        self.mask & (1 << (group as u8)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn is_subset_of(&self, other: &FeatureSetSpec) -> bool {
        self.mask & !other.mask == 0
    }

    /// Member groups in canonical order.
    pub fn groups(&self) -> Vec<Group> {
        GROUPS.iter().copied().filter(|g| self.contains(*g)).collect()
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// Feature sets without CO can drive the process before the clinker is
    /// produced; CO is only measurable post-production.
    pub fn enables_predictive_control(&self) -> bool {
        !self.contains(Group::Co)
    }

    pub fn n_features(&self) -> usize {
        self.groups().iter().map(|g| g.width()).sum()
    }

    /// Column names in canonical order.
    pub fn feature_names(&self) -> Vec<&'static str> {
        let full = full_feature_names();
        self.column_indices().into_iter().map(|i| full[i]).collect()
    }

    /// Indices of this spec's columns inside the full 59-feature vector.
    pub fn column_indices(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.n_features());
        for g in self.groups() {
            idx.extend(g.offset()..g.offset() + g.width());
        }
        idx
    }

    /// Label such as `PP+KF+CO`.
    pub fn label(&self) -> String {
        self.groups().iter().map(|g| g.label()).collect::<Vec<_>>().join("+")
    }

    pub fn parse(s: &str) -> Option<FeatureSetSpec> {
        let mut groups = Vec::new();
        for part in s.split(['+', ',']) {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            groups.push(Group::parse(part)?);
        }
        if groups.is_empty() {
            None
        } else {
            Some(FeatureSetSpec::new(&groups))
        }
    }
}

/// All 15 non-empty group subsets, ordered by subset size and then
/// lexically in canonical group order, so `{PP}` comes first and the full
/// set last.
pub fn expand_feature_sets() -> Vec<FeatureSetSpec> {
    let mut specs: Vec<FeatureSetSpec> = (1u8..16).map(|mask| FeatureSetSpec { mask }).collect();
    specs.sort_by_key(|s| (s.len(), s.groups()));
    specs
}

/// Per-row split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
    Holdout,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Holdout => "holdout",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "holdout" => Some(Split::Holdout),
            _ => None,
        }
    }
}

/// One clinker observation joined with its time-offset features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub clinker_timestamp: DateTime<Utc>,
    /// Feature values in the owning dataset's canonical column order.
    pub features: Vec<f64>,
    /// (alite, belite, ferrite) wt.%.
    pub targets: [f64; 3],
}

/// An ordered collection of aligned samples sharing one feature-set spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    spec: FeatureSetSpec,
    rows: Vec<AlignedSample>,
    split_labels: Option<Vec<Split>>,
}

impl Dataset {
    pub fn new(spec: FeatureSetSpec, rows: Vec<AlignedSample>) -> Result<Self, DataError> {
        if spec.is_empty() {
            return Err(DataError::EmptySpec);
        }
        let width = spec.n_features();
        for (i, row) in rows.iter().enumerate() {
            if row.features.len() != width {
                return Err(DataError::Length { context: "aligned sample", expected: width, got: row.features.len() });
            }
            if i > 0 && rows[i - 1].clinker_timestamp >= row.clinker_timestamp {
                return Err(DataError::NonMonotonic { row: i });
            }
        }
        Ok(Dataset { spec, rows, split_labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<Split>) -> Result<Self, DataError> {
        if labels.len() != self.rows.len() {
            return Err(DataError::LabelCoverage { labels: labels.len(), rows: self.rows.len() });
        }
        self.split_labels = Some(labels);
        Ok(self)
    }

    pub fn spec(&self) -> FeatureSetSpec {
        self.spec
    }

    pub fn rows(&self) -> &[AlignedSample] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split_labels(&self) -> Option<&[Split]> {
        self.split_labels.as_deref()
    }

    pub fn feature_names(&self) -> Vec<&'static str> {
        self.spec.feature_names()
    }

    /// Keep only the columns of `spec`'s groups; targets and row order are
    /// untouched.
    pub fn project(&self, spec: FeatureSetSpec) -> Result<Dataset, DataError> {
        if spec.is_empty() {
            return Err(DataError::EmptySpec);
        }
        if !spec.is_subset_of(&self.spec) {
            let missing = spec.groups().into_iter().filter(|g| !self.spec.contains(*g)).collect();
            return Err(DataError::MissingGroups(missing));
        }
        // Positions of the kept columns inside this dataset's column layout.
        let own = self.spec.column_indices();
        let keep: Vec<usize> = spec
            .column_indices()
            .into_iter()
            .map(|c| own.iter().position(|o| *o == c).expect("subset column"))
            .collect();
        let rows = self
            .rows
            .iter()
            .map(|r| AlignedSample {
                clinker_timestamp: r.clinker_timestamp,
                features: keep.iter().map(|i| r.features[*i]).collect(),
                targets: r.targets,
            })
            .collect();
        Ok(Dataset { spec, rows, split_labels: self.split_labels.clone() })
    }

    /// Rows whose split label matches, as a new dataset (labels dropped).
    pub fn filter_split(&self, split: Split) -> Dataset {
        let labels = self.split_labels.as_ref().expect("dataset has no split labels");
        let rows = self
            .rows
            .iter()
            .zip(labels.iter())
            .filter(|(_, l)| **l == split)
            .map(|(r, _)| r.clone())
            .collect();
        Dataset { spec: self.spec, rows, split_labels: None }
    }

    pub fn target_column(&self, phase: Phase) -> Vec<f64> {
        let k = phase.index();
        self.rows.iter().map(|r| r.targets[k]).collect()
    }

    pub fn feature_column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.feature_names().iter().position(|n| *n == name)?;
        Some(self.rows.iter().map(|r| r.features[idx]).collect())
    }

    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            spec: self.spec,
            rows: self.rows.iter().take(n).cloned().collect(),
            split_labels: self.split_labels.as_ref().map(|l| l.iter().take(n).copied().collect()),
        }
    }
}

pub fn project_features(ds: &Dataset, spec: FeatureSetSpec) -> Result<Dataset, DataError> {
    ds.project(spec)
}

#[cfg(test)]
mod tests;
