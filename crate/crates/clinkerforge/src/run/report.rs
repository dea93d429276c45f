//! Report bundle emission.
//!
//! Reports are data files, not rendered images: a model comparison table
//! with best/second/third markers, parity-plot data, signed-error
//! histograms with sigma markers, temporal holdout series with ±3σ bands,
//! and the 15-feature-set radar table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::datamodel::{Phase, PHASES};
use crate::equations::signed_error_histogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub family: String,
    pub phase: String,
    pub split: String,
    pub mae: f64,
    pub r2: f64,
    pub mape: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::stage("report", e))?;
    w.write_record(["family", "phase", "split", "mae", "r2", "mape"])
        .map_err(|e| RunError::stage("report", e))?;
    for r in rows {
        w.write_record([
            r.family.clone(),
            r.phase.clone(),
            r.split.clone(),
            format!("{}", r.mae),
            format!("{}", r.r2),
            format!("{}", r.mape),
        ])
        .map_err(|e| RunError::stage("report", e))?;
    }
    w.flush().map_err(|e| RunError::stage("report", e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, RunError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| RunError::stage("report", format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| RunError::stage("report", e))?;
        rows.push(MetricsRow {
            family: record[0].to_string(),
            phase: record[1].to_string(),
            split: record[2].to_string(),
            mae: record[3].parse().map_err(|e| RunError::stage("report", e))?,
            r2: record[4].parse().map_err(|e| RunError::stage("report", e))?,
            mape: record[5].parse().map_err(|e| RunError::stage("report", e))?,
        });
    }
    Ok(rows)
}

/// One prediction row as written by the evaluate stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub split: String,
    pub timestamp: String,
    pub y_true: f64,
    pub y_pred: f64,
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::stage("report", e))?;
    w.write_record(["split", "timestamp", "y_true", "y_pred"])
        .map_err(|e| RunError::stage("report", e))?;
    for r in rows {
        w.write_record([
            r.split.clone(),
            r.timestamp.clone(),
            format!("{}", r.y_true),
            format!("{}", r.y_pred),
        ])
        .map_err(|e| RunError::stage("report", e))?;
    }
    w.flush().map_err(|e| RunError::stage("report", e))?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>, RunError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| RunError::stage("report", format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| RunError::stage("report", e))?;
        rows.push(PredictionRow {
            split: record[0].to_string(),
            timestamp: record[1].to_string(),
            y_true: record[2].parse().map_err(|e| RunError::stage("report", e))?,
            y_pred: record[3].parse().map_err(|e| RunError::stage("report", e))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBest {
    pub phase: String,
    pub best: String,
    pub second: Option<String>,
    pub third: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub manifest_hash: String,
    pub families: Vec<String>,
    pub best_by_mape: Vec<PhaseBest>,
    pub error_sigma: BTreeMap<String, f64>,
}

/// Best/second/third per phase by test MAPE (lower is better).
pub fn rank_models(rows: &[MetricsRow], phase: Phase) -> Vec<String> {
    let mut scored: Vec<(&MetricsRow, f64)> = rows
        .iter()
        .filter(|r| r.phase == phase.name() && r.split == "test")
        .map(|r| (r, r.mape))
        .collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    scored.into_iter().map(|(r, _)| r.family.clone()).collect()
}

/// Emit the full report bundle from the evaluation artifacts in `dir`.
/// Expects metrics.csv and per-model prediction files; fails when they
/// are absent.
pub fn emit_report(dir: &Path, manifest_hash: &str) -> Result<ReportSummary, RunError> {
    let metrics_path = dir.join("metrics.csv");
    if !metrics_path.exists() {
        return Err(RunError::stage("report", format!("missing artifact {}", metrics_path.display())));
    }
    let rows = read_metrics_csv(&metrics_path)?;
    let families: Vec<String> = {
        let mut seen = Vec::new();
        for r in &rows {
            if !seen.contains(&r.family) {
                seen.push(r.family.clone());
            }
        }
        seen
    };

    // (a) model comparison table: one row per family, test-split metrics
    // for the three phases, with best/second/third markers alongside.
    {
        let mut w = csv::Writer::from_path(dir.join("model_comparison.csv"))
            .map_err(|e| RunError::stage("report", e))?;
        let mut header = vec!["family".to_string()];
        for phase in PHASES {
            for metric in ["mae", "r2", "mape"] {
                header.push(format!("{}_{}", phase.name(), metric));
            }
        }
        w.write_record(&header).map_err(|e| RunError::stage("report", e))?;
        for family in &families {
            let mut record = vec![family.clone()];
            for phase in PHASES {
                let row = rows
                    .iter()
                    .find(|r| r.family == *family && r.phase == phase.name() && r.split == "test");
                match row {
                    Some(r) => {
                        record.push(format!("{}", r.mae));
                        record.push(format!("{}", r.r2));
                        record.push(format!("{}", r.mape));
                    }
                    None => record.extend([String::new(), String::new(), String::new()]),
                }
            }
            w.write_record(&record).map_err(|e| RunError::stage("report", e))?;
        }
        w.flush().map_err(|e| RunError::stage("report", e))?;
    }

    let mut best_by_mape = Vec::new();
    {
        let mut w = csv::Writer::from_path(dir.join("model_comparison_markers.csv"))
            .map_err(|e| RunError::stage("report", e))?;
        w.write_record(["phase", "metric", "best", "second", "third"])
            .map_err(|e| RunError::stage("report", e))?;
        for phase in PHASES {
            for metric in ["mae", "r2", "mape"] {
                let mut scored: Vec<(String, f64)> = rows
                    .iter()
                    .filter(|r| r.phase == phase.name() && r.split == "test")
                    .map(|r| {
                        let v = match metric {
                            "mae" => r.mae,
                            "r2" => -r.r2, // higher is better
                            _ => r.mape,
                        };
                        (r.family.clone(), v)
                    })
                    .collect();
                scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
                let take = |i: usize| scored.get(i).map(|(f, _)| f.clone()).unwrap_or_default();
                w.write_record([
                    phase.name().to_string(),
                    metric.to_string(),
                    take(0),
                    take(1),
                    take(2),
                ])
                .map_err(|e| RunError::stage("report", e))?;
            }
            let ranking = rank_models(&rows, phase);
            best_by_mape.push(PhaseBest {
                phase: phase.name().to_string(),
                best: ranking.first().cloned().unwrap_or_default(),
                second: ranking.get(1).cloned(),
                third: ranking.get(2).cloned(),
            });
        }
        w.flush().map_err(|e| RunError::stage("report", e))?;
    }

    // (b)-(d) per-phase artifacts for the best model.
    let mut error_sigma = BTreeMap::new();
    for (phase, best) in PHASES.iter().zip(best_by_mape.iter().map(|b| b.best.clone())) {
        if best.is_empty() {
            continue;
        }
        let pred_path = dir.join(format!("predictions_{}_{}.csv", best, phase.name()));
        if !pred_path.exists() {
            return Err(RunError::stage("report", format!("missing artifact {}", pred_path.display())));
        }
        let preds = read_predictions_csv(&pred_path)?;

        // Parity data: straight copy of (split, truth, prediction).
        {
            let mut w = csv::Writer::from_path(dir.join(format!("parity_{}.csv", phase.name())))
                .map_err(|e| RunError::stage("report", e))?;
            w.write_record(["split", "y_true", "y_pred"]).map_err(|e| RunError::stage("report", e))?;
            for p in &preds {
                w.write_record([p.split.clone(), format!("{}", p.y_true), format!("{}", p.y_pred)])
                    .map_err(|e| RunError::stage("report", e))?;
            }
            w.flush().map_err(|e| RunError::stage("report", e))?;
        }

        // Signed-error histogram on the test split with sigma markers.
        let test_errors: Vec<f64> = preds
            .iter()
            .filter(|p| p.split == "test")
            .map(|p| p.y_pred - p.y_true)
            .collect();
        if !test_errors.is_empty() {
            let n = test_errors.len() as f64;
            let mean = test_errors.iter().sum::<f64>() / n;
            let sigma =
                (test_errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
            error_sigma.insert(phase.name().to_string(), sigma);
            let hist = signed_error_histogram(&test_errors, 0.5);
            let mut w = csv::Writer::from_path(dir.join(format!("error_hist_{}.csv", phase.name())))
                .map_err(|e| RunError::stage("report", e))?;
            w.write_record(["bin_lo", "count", "two_sigma", "four_sigma"])
                .map_err(|e| RunError::stage("report", e))?;
            for (lo, count) in &hist.bins {
                w.write_record([
                    format!("{lo}"),
                    format!("{count}"),
                    format!("{}", 2.0 * sigma),
                    format!("{}", 4.0 * sigma),
                ])
                .map_err(|e| RunError::stage("report", e))?;
            }
            w.flush().map_err(|e| RunError::stage("report", e))?;
        }

        // Temporal holdout series with ±3σ bands from train residuals.
        let holdout: Vec<&PredictionRow> = preds.iter().filter(|p| p.split == "holdout").collect();
        if !holdout.is_empty() {
            let train_errors: Vec<f64> = preds
                .iter()
                .filter(|p| p.split == "train")
                .map(|p| p.y_pred - p.y_true)
                .collect();
            let n = train_errors.len().max(1) as f64;
            let mean = train_errors.iter().sum::<f64>() / n;
            let sigma =
                (train_errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
            let mut w = csv::Writer::from_path(dir.join(format!("holdout_{}.csv", phase.name())))
                .map_err(|e| RunError::stage("report", e))?;
            w.write_record(["timestamp", "y_true", "y_pred", "band_lo", "band_hi"])
                .map_err(|e| RunError::stage("report", e))?;
            for p in holdout {
                w.write_record([
                    p.timestamp.clone(),
                    format!("{}", p.y_true),
                    format!("{}", p.y_pred),
                    format!("{}", p.y_pred - 3.0 * sigma),
                    format!("{}", p.y_pred + 3.0 * sigma),
                ])
                .map_err(|e| RunError::stage("report", e))?;
            }
            w.flush().map_err(|e| RunError::stage("report", e))?;
        }
    }

    let summary = ReportSummary {
        manifest_hash: manifest_hash.to_string(),
        families,
        best_by_mape,
        error_sigma,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| RunError::stage("report", e))?;
    std::fs::write(dir.join("report.json"), json).map_err(|e| RunError::stage("report", e))?;
    Ok(summary)
}

/// Radar table: one row per feature-set, per-phase test MAPE.
pub fn write_radar_csv(path: &Path, rows: &[(String, [f64; 3])]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::stage("report", e))?;
    w.write_record(["feature_set", "alite_mape", "belite_mape", "ferrite_mape"])
        .map_err(|e| RunError::stage("report", e))?;
    for (label, mapes) in rows {
        w.write_record([
            label.clone(),
            format!("{}", mapes[0]),
            format!("{}", mapes[1]),
            format!("{}", mapes[2]),
        ])
        .map_err(|e| RunError::stage("report", e))?;
    }
    w.flush().map_err(|e| RunError::stage("report", e))?;
    Ok(())
}
