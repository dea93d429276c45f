//! Linear clinker equations: the classical Bogue coefficient set and
//! plant-specific equations fitted directly from data.
//!
//! An equation set maps an oxide vector to (alite, belite, ferrite) as
//! `Y = A·X + B`. Four fitted cases are supported: major oxides with and
//! without an intercept, and all nine oxides with and without an
//! intercept. The Bogue coefficients ship as an editable plain-text file
//! rather than hardcoded numbers, so the plant's own variant can be
//! swapped in; its aluminate row is evaluated internally and reported on
//! request.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Dataset, Group};
use crate::eval::{self, Metrics};

#[derive(Debug, Error)]
pub enum EquationError {
    #[error("oxide vector has {got} entries, equation case needs {need}")]
    DimensionMismatch { need: usize, got: usize },
    #[error("design matrix is rank deficient; not enough independent rows")]
    RankDeficient,
    #[error("dataset needs clinker oxide features and phase targets")]
    MissingOxides,
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("equation file {file}: {msg}")]
    Format { file: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}

/// Which oxide columns and intercept the equation set uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquationCase {
    MajorOnly,
    MajorIntercept,
    MajorMinor,
    MajorMinorIntercept,
    BogueStandard,
}

impl EquationCase {
    /// Number of oxide inputs: the four major oxides or all nine.
    pub fn n_oxides(self) -> usize {
        match self {
            EquationCase::MajorOnly | EquationCase::MajorIntercept | EquationCase::BogueStandard => 4,
            EquationCase::MajorMinor | EquationCase::MajorMinorIntercept => 9,
        }
    }

    pub fn has_intercept(self) -> bool {
        matches!(self, EquationCase::MajorIntercept | EquationCase::MajorMinorIntercept)
    }

    pub fn name(self) -> &'static str {
        match self {
            EquationCase::MajorOnly => "major",
            EquationCase::MajorIntercept => "major_intercept",
            EquationCase::MajorMinor => "major_minor",
            EquationCase::MajorMinorIntercept => "major_minor_intercept",
            EquationCase::BogueStandard => "bogue",
        }
    }

    pub fn parse(s: &str) -> Option<EquationCase> {
        match s.to_ascii_lowercase().as_str() {
            "major" | "case1" => Some(EquationCase::MajorOnly),
            "major_intercept" | "case2" => Some(EquationCase::MajorIntercept),
            "major_minor" | "case3" => Some(EquationCase::MajorMinor),
            "major_minor_intercept" | "case4" => Some(EquationCase::MajorMinorIntercept),
            "bogue" => Some(EquationCase::BogueStandard),
            _ => None,
        }
    }
}

pub const PHASE_ROWS: [&str; 3] = ["alite", "belite", "ferrite"];
pub const MAJOR_OXIDES: [&str; 4] = ["CaO", "SiO2", "Al2O3", "Fe2O3"];
pub const ALL_OXIDES: [&str; 9] =
    ["CaO", "SiO2", "Al2O3", "Fe2O3", "MgO", "SO3", "K2O", "Na2O", "Cl"];

/// A 3×k coefficient matrix plus optional intercept mapping oxides to
/// (alite, belite, ferrite). The Bogue variant carries an extra aluminate
/// row that is reported only on request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEquationSet {
    pub case: EquationCase,
    /// Row-major coefficients, one row per output phase.
    pub coefficients: Vec<Vec<f64>>,
    pub intercept: [f64; 3],
    /// Aluminate coefficients and intercept, Bogue only.
    pub aluminate: Option<(Vec<f64>, f64)>,
    pub label: String,
}

impl PhaseEquationSet {
    pub fn n_oxides(&self) -> usize {
        self.case.n_oxides()
    }

    /// `Y = A·X + B` with no clipping; raw linear output.
    pub fn eval(&self, oxides: &[f64]) -> Result<[f64; 3], EquationError> {
        let need = self.n_oxides();
        if oxides.len() != need {
            return Err(EquationError::DimensionMismatch { need, got: oxides.len() });
        }
        let mut out = [0.0; 3];
        for (k, row) in self.coefficients.iter().enumerate() {
            out[k] = self.intercept[k] + row.iter().zip(oxides).map(|(a, x)| a * x).sum::<f64>();
        }
        Ok(out)
    }

    /// Aluminate estimate, available for the Bogue set.
    pub fn eval_aluminate(&self, oxides: &[f64]) -> Option<f64> {
        self.aluminate
            .as_ref()
            .map(|(row, b)| b + row.iter().zip(oxides).map(|(a, x)| a * x).sum::<f64>())
    }
}

pub fn eval_equation(eq: &PhaseEquationSet, oxides: &[f64]) -> Result<[f64; 3], EquationError> {
    eq.eval(oxides)
}

// ---------------------------------------------------------------------------
// Reference coefficient sets
// ---------------------------------------------------------------------------

/// Plant-fitted reference coefficients, major oxides, no intercept.
pub fn reference_major() -> PhaseEquationSet {
    PhaseEquationSet {
        case: EquationCase::MajorOnly,
        coefficients: vec![
            vec![2.97, -4.5, -7.25, 0.05],
            vec![-2.1, 5.66, 6.15, -0.11],
            vec![0.02, -0.28, -0.28, 3.82],
        ],
        intercept: [0.0; 3],
        aluminate: None,
        label: "reference major".into(),
    }
}

/// Plant-fitted reference coefficients, major oxides with intercept.
pub fn reference_major_intercept() -> PhaseEquationSet {
    PhaseEquationSet {
        case: EquationCase::MajorIntercept,
        coefficients: vec![
            vec![4.84, -3.62, -4.47, 1.52],
            vec![-4.71, 4.5, 2.39, -1.89],
            vec![0.65, -0.3, 0.52, 4.24],
        ],
        intercept: [-166.9, -219.4, -45.0],
        aluminate: None,
        label: "reference major+intercept".into(),
    }
}

/// Plant-fitted reference coefficients, all nine oxides, no intercept.
pub fn reference_major_minor() -> PhaseEquationSet {
    PhaseEquationSet {
        case: EquationCase::MajorMinor,
        coefficients: vec![
            vec![3.08, -4.72, -5.59, 0.09, -1.3, 2.81, -13.62, 4.78, -83.96],
            vec![-2.31, 6.12, 4.92, -0.12, -1.71, -2.83, 10.76, -2.33, 107.0],
            vec![0.11, -0.07, 0.17, 3.56, -0.8, 2.41, -5.17, -2.85, -30.0],
        ],
        intercept: [0.0; 3],
        aluminate: None,
        label: "reference major+minor".into(),
    }
}

/// Plant-fitted reference coefficients, all nine oxides with intercept.
pub fn reference_major_minor_intercept() -> PhaseEquationSet {
    PhaseEquationSet {
        case: EquationCase::MajorMinorIntercept,
        coefficients: vec![
            vec![4.72, -3.15, -4.28, 3.08, 0.33, 2.4, -7.0, 5.96, -75.0],
            vec![-5.17, 4.04, 1.7, -3.48, -0.94, -5.11, 3.76, -4.3, 86.46],
            vec![0.05, -0.13, 0.1, 3.41, -0.9, 2.29, -5.35, -2.99, -27.37],
        ],
        intercept: [-166.9, -219.4, -45.0],
        aluminate: None,
        label: "reference major+minor+intercept".into(),
    }
}

/// The bundled standard Bogue coefficient text.
pub const BOGUE_STANDARD_TEXT: &str = include_str!("../assets/bogue_standard.txt");

/// The standard Bogue set parsed from the bundled constants file.
pub fn bogue_standard() -> PhaseEquationSet {
    parse_equation_text(BOGUE_STANDARD_TEXT, "bogue_standard.txt").expect("bundled Bogue constants parse")
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Extract the oxide design columns a case needs from a dataset that
/// carries clinker oxide features.
fn oxide_matrix(ds: &Dataset, case: EquationCase) -> Result<DMatrix<f64>, EquationError> {
    if !ds.spec().contains(Group::Co) {
        return Err(EquationError::MissingOxides);
    }
    let co = ds
        .project(crate::datamodel::FeatureSetSpec::new(&[Group::Co]))
        .map_err(|_| EquationError::MissingOxides)?;
    let k = case.n_oxides();
    Ok(DMatrix::from_fn(co.len(), k, |i, j| co.rows()[i].features[j]))
}

/// Least squares per phase over the case's oxide columns, with an
/// intercept exactly when the case carries one.
pub fn fit_clinker_equations(ds: &Dataset, case: EquationCase) -> Result<PhaseEquationSet, EquationError> {
    if case == EquationCase::BogueStandard {
        return Ok(bogue_standard());
    }
    let k = case.n_oxides();
    if ds.len() < k + 1 {
        return Err(EquationError::TooFewRows { need: k + 1, got: ds.len() });
    }
    let x = oxide_matrix(ds, case)?;
    let cols = k + usize::from(case.has_intercept());
    let mut design = DMatrix::zeros(ds.len(), cols);
    design.view_mut((0, 0), (ds.len(), k)).copy_from(&x);
    if case.has_intercept() {
        design.column_mut(k).fill(1.0);
    }
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * max_sv.max(1.0)).count();
    if rank < cols {
        return Err(EquationError::RankDeficient);
    }

    let mut coefficients = Vec::with_capacity(3);
    let mut intercept = [0.0; 3];
    for phase_idx in 0..3 {
        let y = DVector::from_fn(ds.len(), |i, _| ds.rows()[i].targets[phase_idx]);
        let beta = svd.solve(&y, 1e-12).map_err(|_| EquationError::RankDeficient)?;
        coefficients.push(beta.iter().take(k).copied().collect());
        if case.has_intercept() {
            intercept[phase_idx] = beta[k];
        }
    }
    Ok(PhaseEquationSet {
        case,
        coefficients,
        intercept,
        aluminate: None,
        label: format!("fitted {}", case.name()),
    })
}

// ---------------------------------------------------------------------------
// Comparison harness
// ---------------------------------------------------------------------------

pub const ERROR_HISTOGRAM_BIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub bin_width: f64,
    /// (bin lower edge, count); signed errors are predicted − actual.
    pub bins: Vec<(f64, usize)>,
    pub mean_error: f64,
}

pub fn signed_error_histogram(errors: &[f64], bin_width: f64) -> ErrorHistogram {
    let mean_error = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    let mut counts = std::collections::BTreeMap::new();
    for e in errors {
        let bin = (e / bin_width).floor() as i64;
        *counts.entry(bin).or_insert(0usize) += 1;
    }
    ErrorHistogram {
        bin_width,
        bins: counts.into_iter().map(|(b, c)| (b as f64 * bin_width, c)).collect(),
        mean_error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseComparison {
    pub phase: String,
    pub metrics: Metrics,
    pub histogram: ErrorHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub case: String,
    pub phases: Vec<PhaseComparison>,
}

/// Evaluate every equation set on the same dataset: per-phase metrics and
/// signed-error histograms.
pub fn compare_equations(
    eqs: &[&PhaseEquationSet],
    ds: &Dataset,
) -> Result<Vec<ComparisonRow>, EquationError> {
    let mut rows = Vec::with_capacity(eqs.len());
    for eq in eqs {
        let x = oxide_matrix(ds, eq.case)?;
        let mut phases = Vec::with_capacity(3);
        for (phase_idx, phase) in PHASE_ROWS.iter().enumerate() {
            let mut preds = Vec::with_capacity(ds.len());
            let mut truths = Vec::with_capacity(ds.len());
            let mut errors = Vec::with_capacity(ds.len());
            for i in 0..ds.len() {
                let oxides: Vec<f64> = (0..eq.n_oxides()).map(|j| x[(i, j)]).collect();
                let pred = eq.eval(&oxides)?[phase_idx];
                let truth = ds.rows()[i].targets[phase_idx];
                preds.push(pred);
                truths.push(truth);
                errors.push(pred - truth);
            }
            phases.push(PhaseComparison {
                phase: phase.to_string(),
                metrics: eval::metrics(&truths, &preds)?,
                histogram: signed_error_histogram(&errors, ERROR_HISTOGRAM_BIN),
            });
        }
        rows.push(ComparisonRow { label: eq.label.clone(), case: eq.case.name().to_string(), phases });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Plain-text format
// ---------------------------------------------------------------------------

/// Render the labeled row-major text format.
pub fn equation_to_text(eq: &PhaseEquationSet) -> String {
    let oxides: Vec<&str> =
        if eq.n_oxides() == 4 { MAJOR_OXIDES.to_vec() } else { ALL_OXIDES.to_vec() };
    let mut out = String::new();
    out.push_str(&format!("# {}\n", eq.label));
    out.push_str(&format!("case = {}\n", eq.case.name()));
    out.push_str(&format!("oxides = {}\n", oxides.join(" ")));
    for (k, phase) in PHASE_ROWS.iter().enumerate() {
        let coefs: Vec<String> = eq.coefficients[k].iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("{phase} {} {}\n", coefs.join(" "), eq.intercept[k]));
    }
    if let Some((row, b)) = &eq.aluminate {
        let coefs: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("aluminate {} {}\n", coefs.join(" "), b));
    }
    out
}

/// Parse the labeled row-major text format.
pub fn parse_equation_text(text: &str, file: &str) -> Result<PhaseEquationSet, EquationError> {
    let mut case = None;
    let mut n_oxides = None;
    let mut rows: Vec<(String, Vec<f64>, f64)> = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("case") {
            let value = rest.trim_start_matches([' ', '=']).trim();
            case = Some(EquationCase::parse(value).ok_or_else(|| EquationError::Format {
                file: file.into(),
                msg: format!("unknown case {value:?}"),
            })?);
            continue;
        }
        if let Some(rest) = line.strip_prefix("oxides") {
            let names: Vec<&str> = rest.trim_start_matches([' ', '=']).split_whitespace().collect();
            n_oxides = Some(names.len());
            continue;
        }
        let mut parts = line.split_whitespace();
        let label = parts.next().unwrap().to_string();
        let numbers: Vec<f64> = parts
            .map(|v| {
                v.parse::<f64>().map_err(|e| EquationError::Format {
                    file: file.into(),
                    msg: format!("bad number {v:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if numbers.len() < 2 {
            return Err(EquationError::Format {
                file: file.into(),
                msg: format!("row {label:?} needs coefficients and an intercept"),
            });
        }
        let (coefs, intercept) = numbers.split_at(numbers.len() - 1);
        rows.push((label, coefs.to_vec(), intercept[0]));
    }
    let case = case
        .ok_or_else(|| EquationError::Format { file: file.into(), msg: "missing `case =` line".into() })?;
    let k = n_oxides.unwrap_or(case.n_oxides());
    if k != case.n_oxides() {
        return Err(EquationError::Format {
            file: file.into(),
            msg: format!("case {} expects {} oxides, file lists {k}", case.name(), case.n_oxides()),
        });
    }
    let mut coefficients = vec![Vec::new(); 3];
    let mut intercept = [0.0; 3];
    let mut aluminate = None;
    for (label, coefs, b) in rows {
        if coefs.len() != k {
            return Err(EquationError::Format {
                file: file.into(),
                msg: format!("row {label:?} has {} coefficients, expected {k}", coefs.len()),
            });
        }
        match label.as_str() {
            "alite" => {
                coefficients[0] = coefs;
                intercept[0] = b;
            }
            "belite" => {
                coefficients[1] = coefs;
                intercept[1] = b;
            }
            "ferrite" => {
                coefficients[2] = coefs;
                intercept[2] = b;
            }
            "aluminate" => aluminate = Some((coefs, b)),
            other => {
                return Err(EquationError::Format {
                    file: file.into(),
                    msg: format!("unknown phase row {other:?}"),
                })
            }
        }
    }
    if coefficients.iter().any(Vec::is_empty) {
        return Err(EquationError::Format {
            file: file.into(),
            msg: "file must define alite, belite and ferrite rows".into(),
        });
    }
    Ok(PhaseEquationSet { case, coefficients, intercept, aluminate, label: format!("loaded from {file}") })
}

pub fn load_equation_file(path: &std::path::Path) -> Result<PhaseEquationSet, EquationError> {
    let text = std::fs::read_to_string(path)?;
    parse_equation_text(&text, &path.display().to_string())
}

pub fn save_equation_file(path: &std::path::Path, eq: &PhaseEquationSet) -> Result<(), EquationError> {
    std::fs::write(path, equation_to_text(eq))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{schema, AlignedSample, FeatureSetSpec};
    use approx::assert_abs_diff_eq;
    use chrono::{TimeZone, Utc};
    use rand::Rng;

    fn mean_oxides() -> Vec<f64> {
        schema::CO_STATS.iter().map(|c| c.mean).collect()
    }

    #[test]
    fn reference_major_at_mean_oxides_matches_hand_arithmetic() {
        let eq = reference_major();
        let means = mean_oxides();
        let out = eq.eval(&means[..4]).unwrap();
        // Hand oracle: explicit expansion of the matrix-vector product.
        let alite = 2.97 * 64.62 - 4.5 * 20.89 - 7.25 * 5.24 + 0.05 * 3.55;
        let belite = -2.1 * 64.62 + 5.66 * 20.89 + 6.15 * 5.24 - 0.11 * 3.55;
        assert_abs_diff_eq!(out[0], alite, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], belite, epsilon = 1e-12);
        assert_abs_diff_eq!(out[0], 60.10, epsilon = 0.01);
        assert_abs_diff_eq!(out[1], 14.37, epsilon = 0.01);
        // The printed ferrite row lands far from the observed mean; the
        // fitting procedure, not this constant, is authoritative there.
        assert_abs_diff_eq!(out[2], 7.54, epsilon = 0.01);
    }

    #[test]
    fn zero_oxides_and_intercept_give_zero() {
        let eq = reference_major();
        assert_eq!(eq.eval(&[0.0; 4]).unwrap(), [0.0; 3]);
    }

    #[test]
    fn zero_intercept_cases_are_exactly_linear() {
        let eq = reference_major_minor();
        let mut rng = crate::rng::derive_rng(1, "test.eq.lin", 0);
        let x: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 10.0).collect();
        let y: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 10.0).collect();
        let (a, b) = (2.3, -0.7);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let out = eq.eval(&combo).unwrap();
        let ox = eq.eval(&x).unwrap();
        let oy = eq.eval(&y).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(out[k], a * ox[k] + b * oy[k], epsilon = 1e-9);
        }
    }

    fn planted_dataset(n: usize, eq: &PhaseEquationSet, seed: u64) -> Dataset {
        let mut rng = crate::rng::derive_rng(seed, "test.eq.data", 0);
        let spec = FeatureSetSpec::new(&[Group::Co]);
        let rows: Vec<AlignedSample> = (0..n)
            .map(|i| {
                let features: Vec<f64> = schema::CO_STATS
                    .iter()
                    .map(|s| s.mean + s.sd * (rng.random::<f64>() * 6.0 - 3.0))
                    .collect();
                let oxides = &features[..eq.n_oxides()];
                let targets = eq.eval(oxides).unwrap();
                AlignedSample {
                    clinker_timestamp: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
                        + chrono::Duration::hours(i as i64),
                    features,
                    targets,
                }
            })
            .collect();
        Dataset::new(spec, rows).unwrap()
    }

    #[test]
    fn planted_linear_coefficients_are_recovered() {
        let truth = reference_major();
        let ds = planted_dataset(200, &truth, 2);
        let fitted = fit_clinker_equations(&ds, EquationCase::MajorOnly).unwrap();
        for k in 0..3 {
            for j in 0..4 {
                assert_abs_diff_eq!(
                    fitted.coefficients[k][j],
                    truth.coefficients[k][j],
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn planted_intercept_is_recovered() {
        let truth = reference_major_intercept();
        let ds = planted_dataset(200, &truth, 3);
        let fitted = fit_clinker_equations(&ds, EquationCase::MajorIntercept).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(fitted.intercept[k], truth.intercept[k], epsilon = 1e-6);
            for j in 0..4 {
                assert_abs_diff_eq!(
                    fitted.coefficients[k][j],
                    truth.coefficients[k][j],
                    epsilon = 1e-6
                );
            }
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_design_columns() {
        let mut rng = crate::rng::derive_rng(4, "test.eq.orth", 0);
        let truth = reference_major_intercept();
        let base = planted_dataset(150, &truth, 4);
        let rows: Vec<AlignedSample> = base
            .rows()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for t in r.targets.iter_mut() {
                    *t += rng.random::<f64>() - 0.5;
                }
                r
            })
            .collect();
        let ds = Dataset::new(base.spec(), rows).unwrap();
        let fitted = fit_clinker_equations(&ds, EquationCase::MajorIntercept).unwrap();
        for k in 0..3 {
            let mut dots = vec![0.0; 5];
            let mut scale = 0.0f64;
            for row in ds.rows() {
                let pred = fitted.eval(&row.features[..4]).unwrap()[k];
                let resid = row.targets[k] - pred;
                scale += resid * resid;
                for j in 0..4 {
                    dots[j] += resid * row.features[j];
                }
                dots[4] += resid;
            }
            let scale = scale.sqrt().max(1e-12) * ds.len() as f64;
            for dot in dots {
                assert!(dot.abs() / scale < 1e-8, "phase {k}: residual correlation {dot}");
            }
        }
    }

    #[test]
    fn intercept_fit_has_mean_zero_signed_errors() {
        let mut rng = crate::rng::derive_rng(5, "test.eq.mean", 0);
        let truth = reference_major();
        let base = planted_dataset(120, &truth, 5);
        let rows: Vec<AlignedSample> = base
            .rows()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for t in r.targets.iter_mut() {
                    *t += 2.0 * (rng.random::<f64>() - 0.5);
                }
                r
            })
            .collect();
        let ds = Dataset::new(base.spec(), rows).unwrap();
        let fitted = fit_clinker_equations(&ds, EquationCase::MajorIntercept).unwrap();
        let table = compare_equations(&[&fitted], &ds).unwrap();
        for phase in &table[0].phases {
            assert!(
                phase.histogram.mean_error.abs() < 1e-8,
                "{}: mean signed error {}",
                phase.phase,
                phase.histogram.mean_error
            );
        }
    }

    #[test]
    fn bogue_constants_round_trip_exactly() {
        let eq = bogue_standard();
        let text = equation_to_text(&eq);
        let back = parse_equation_text(&text, "round-trip").unwrap();
        assert_eq!(back.coefficients, eq.coefficients);
        assert_eq!(back.intercept, eq.intercept);
        assert_eq!(back.aluminate, eq.aluminate);
    }

    #[test]
    fn bogue_is_linear_and_matches_hand_product() {
        let eq = bogue_standard();
        let means = mean_oxides();
        let x = &means[..4];
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let one = eq.eval(x).unwrap();
        let two = eq.eval(&doubled).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(two[k], 2.0 * one[k], epsilon = 1e-9);
        }
        // Hand matrix-vector product.
        for (k, row) in eq.coefficients.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += row[j] * x[j];
            }
            assert_abs_diff_eq!(one[k], acc, epsilon = 1e-10);
        }
        assert!(eq.eval_aluminate(x).is_some());
        assert!(reference_major().eval_aluminate(x).is_none());
    }

    #[test]
    fn fitted_equation_beats_a_mis_scaled_baseline() {
        let mut rng = crate::rng::derive_rng(6, "test.eq.beat", 0);
        let truth = reference_major();
        let base = planted_dataset(300, &truth, 6);
        let rows: Vec<AlignedSample> = base
            .rows()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                for t in r.targets.iter_mut() {
                    *t += 0.8 * (rng.random::<f64>() - 0.5);
                }
                r
            })
            .collect();
        let ds = Dataset::new(base.spec(), rows).unwrap();
        let fitted = fit_clinker_equations(&ds, EquationCase::MajorOnly).unwrap();
        // A deliberately mis-scaled baseline: every coefficient inflated.
        let mut skewed = bogue_standard();
        for row in skewed.coefficients.iter_mut() {
            for v in row.iter_mut() {
                *v *= 1.15;
            }
        }
        skewed.label = "mis-scaled".into();
        let table = compare_equations(&[&fitted, &skewed], &ds).unwrap();
        for k in 0..3 {
            let fit_mae = table[0].phases[k].metrics.mae;
            let skew_mae = table[1].phases[k].metrics.mae;
            assert!(fit_mae < skew_mae, "phase {k}: fitted {fit_mae} vs baseline {skew_mae}");
        }
    }

    #[test]
    fn identical_equations_produce_identical_rows() {
        let truth = reference_major();
        let ds = planted_dataset(50, &truth, 7);
        let table = compare_equations(&[&truth, &truth], &ds).unwrap();
        assert_eq!(table[0].phases, table[1].phases);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let eq = reference_major();
        assert!(matches!(
            eq.eval(&[1.0; 9]),
            Err(EquationError::DimensionMismatch { need: 4, got: 9 })
        ));
    }
}
