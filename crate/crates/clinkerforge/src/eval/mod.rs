//! Metrics, splits, standardization, cross-validation and grid search.
//!
//! The three metrics follow the usual conventions: MAPE is reported in
//! percent, and R² uses the total sum of squares over the observed values.
//! Model selection minimizes mean validation MAPE across folds, with
//! standardization refit inside every fold so no validation statistic can
//! leak into training.

use std::collections::BTreeMap;

use chrono::{Datelike, Months, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DataError, Dataset, Phase, Split};
use crate::models::{
    forest, gbt, gpr, kernel::KernelSpec, linear, mlp, svr, ModelError, ModelState, Regressor,
    SavedModel, Standardizer, MODEL_FORMAT_VERSION,
};
use crate::rng::{derive_rng, derive_seed};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("true value at index {index} is zero; MAPE is undefined")]
    ZeroTrueValue { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("target is constant; R² is undefined")]
    ConstantTarget,
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("every grid candidate failed; first error: {0}")]
    AllCandidatesFailed(String),
    #[error("unknown model family {0:?}")]
    UnknownFamily(String),
    #[error("unknown parameter {key:?} for family {family}")]
    UnknownParam { family: &'static str, key: String },
    #[error("bad value {value:?} for parameter {key:?}: {msg}")]
    BadParam { key: String, value: String, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true, y_pred)?;
    let mut acc = 0.0;
    for (i, (t, p)) in y_true.iter().zip(y_pred).enumerate() {
        if *t == 0.0 {
            return Err(EvalError::ZeroTrueValue { index: i });
        }
        acc += ((p - t) / t).abs();
    }
    Ok(100.0 * acc / y_true.len() as f64)
}

/// Mean absolute error, in target units.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true, y_pred)?;
    let acc: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (p - t).abs()).sum();
    Ok(acc / y_true.len() as f64)
}

/// Coefficient of determination, `1 − RSS/TSS` with TSS over the observed
/// values.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true, y_pred)?;
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let tss: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    if tss == 0.0 {
        return Err(EvalError::ConstantTarget);
    }
    let rss: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (p - t) * (p - t)).sum();
    Ok(1.0 - rss / tss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mape: f64,
    pub r2: f64,
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics, EvalError> {
    Ok(Metrics { mae: mae(y_true, y_pred)?, mape: mape(y_true, y_pred)?, r2: r2(y_true, y_pred)? })
}

// ---------------------------------------------------------------------------
// Splits and standardization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitMode {
    Random,
    /// Reserve the leading `months` calendar months as an untouched
    /// holdout, then split the rest randomly.
    TemporalHoldout { months: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub rows: usize,
    pub target_means: [f64; 3],
    pub target_sds: [f64; 3],
}

fn split_stats(ds: &Dataset, split: Split) -> SplitStats {
    let rows: Vec<&crate::datamodel::AlignedSample> = ds
        .rows()
        .iter()
        .zip(ds.split_labels().unwrap())
        .filter(|(_, l)| **l == split)
        .map(|(r, _)| r)
        .collect();
    let n = rows.len().max(1) as f64;
    let mut means = [0.0; 3];
    let mut sds = [0.0; 3];
    for k in 0..3 {
        let m = rows.iter().map(|r| r.targets[k]).sum::<f64>() / n;
        let v = rows.iter().map(|r| (r.targets[k] - m) * (r.targets[k] - m)).sum::<f64>() / n;
        means[k] = m;
        sds[k] = v.sqrt();
    }
    SplitStats { split: split.name().to_string(), rows: rows.len(), target_means: means, target_sds: sds }
}

/// Assign train/test (and optionally holdout) labels. The row order of the
/// dataset is untouched; only labels are attached. Also reports per-split
/// target distributions so a bad split is visible immediately.
pub fn split_train_test(
    ds: &Dataset,
    ratio: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Dataset, Vec<SplitStats>), EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::BadParam {
            key: "ratio".into(),
            value: ratio.to_string(),
            msg: "must be strictly between 0 and 1".into(),
        });
    }
    let n = ds.len();
    if n < 2 {
        return Err(EvalError::TooFewRows { need: 2, got: n });
    }
    let mut labels = vec![Split::Train; n];
    let eligible: Vec<usize> = match mode {
        SplitMode::Random => (0..n).collect(),
        SplitMode::TemporalHoldout { months } => {
            let first = ds.rows()[0].clinker_timestamp;
            let month_start = Utc.with_ymd_and_hms(first.year(), first.month(), 1, 0, 0, 0).unwrap();
            let cutoff = month_start + Months::new(months);
            let mut rest = Vec::new();
            for (i, row) in ds.rows().iter().enumerate() {
                if row.clinker_timestamp < cutoff {
                    labels[i] = Split::Holdout;
                } else {
                    rest.push(i);
                }
            }
            rest
        }
    };
    let m = eligible.len();
    if m >= 2 {
        let mut order = eligible.clone();
        let mut rng = derive_rng(seed, "split.random", 0);
        for i in (1..m).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let n_train = ((m as f64 * ratio).round() as usize).clamp(1, m - 1);
        for (pos, idx) in order.into_iter().enumerate() {
            labels[idx] = if pos < n_train { Split::Train } else { Split::Test };
        }
    }
    let labeled = ds.clone().with_labels(labels)?;
    let mut stats = vec![split_stats(&labeled, Split::Train), split_stats(&labeled, Split::Test)];
    if matches!(mode, SplitMode::TemporalHoldout { .. }) {
        stats.push(split_stats(&labeled, Split::Holdout));
    }
    Ok((labeled, stats))
}

/// Fit a z-scorer on the training matrix and apply it to every matrix.
/// Constant columns pass through untouched and are reported back.
pub fn standardize_fit_apply(
    train: &DMatrix<f64>,
    others: &[&DMatrix<f64>],
) -> Result<(Standardizer, DMatrix<f64>, Vec<DMatrix<f64>>, Vec<usize>), EvalError> {
    if train.nrows() == 0 {
        return Err(EvalError::TooFewRows { need: 1, got: 0 });
    }
    let mut std = Standardizer::fit(train);
    let mut constant_columns = Vec::new();
    let n = train.nrows() as f64;
    for c in 0..train.ncols() {
        let m = train.column(c).iter().sum::<f64>() / n;
        let var = train.column(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        if var == 0.0 {
            constant_columns.push(c);
            std.mean[c] = 0.0;
            std.sd[c] = 1.0;
        }
    }
    let train_s = std.transform(train);
    let others_s = others.iter().map(|x| std.transform(x)).collect();
    Ok((std, train_s, others_s, constant_columns))
}

/// `k` disjoint validation folds covering `0..n`, sizes differing by at
/// most one (larger folds first).
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if n < k {
        return Err(EvalError::TooFewRows { need: k, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, "kfold", 0);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold: Vec<usize> = order[at..at + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        at += size;
    }
    Ok(folds)
}

// ---------------------------------------------------------------------------
// Dataset to matrix plumbing
// ---------------------------------------------------------------------------

pub fn design_matrix(ds: &Dataset) -> DMatrix<f64> {
    let p = ds.spec().n_features();
    DMatrix::from_fn(ds.len(), p, |i, j| ds.rows()[i].features[j])
}

pub fn target_vector(ds: &Dataset, phase: Phase) -> DVector<f64> {
    let k = phase.index();
    DVector::from_fn(ds.len(), |i, _| ds.rows()[i].targets[k])
}

// ---------------------------------------------------------------------------
// Model family registry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Lr,
    Lasso,
    Ridge,
    ElasticNet,
    Rf,
    Gbt,
    Svr,
    Gpr,
    Nn,
}

pub const FAMILIES: [Family; 9] = [
    Family::Lr,
    Family::Lasso,
    Family::Ridge,
    Family::ElasticNet,
    Family::Rf,
    Family::Gbt,
    Family::Svr,
    Family::Gpr,
    Family::Nn,
];

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Lr => "lr",
            Family::Lasso => "lasso",
            Family::Ridge => "ridge",
            Family::ElasticNet => "elastic_net",
            Family::Rf => "rf",
            Family::Gbt => "gbt",
            Family::Svr => "svr",
            Family::Gpr => "gpr",
            Family::Nn => "nn",
        }
    }

    pub fn parse(s: &str) -> Result<Family, EvalError> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "linear" | "linear_regression" => Ok(Family::Lr),
            "lasso" => Ok(Family::Lasso),
            "ridge" => Ok(Family::Ridge),
            "elastic_net" | "elasticnet" | "en" => Ok(Family::ElasticNet),
            "rf" | "random_forest" => Ok(Family::Rf),
            "gbt" | "boosted_trees" | "xgb" => Ok(Family::Gbt),
            "svr" => Ok(Family::Svr),
            "gpr" => Ok(Family::Gpr),
            "nn" | "mlp" => Ok(Family::Nn),
            other => Err(EvalError::UnknownFamily(other.to_string())),
        }
    }
}

/// Flat key-value hyperparameters, as read from config or grid files.
pub type Params = BTreeMap<String, String>;

fn get_f64(params: &Params, key: &str, default: f64) -> Result<f64, EvalError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.parse::<f64>().map_err(|e| EvalError::BadParam {
            key: key.to_string(),
            value: v.clone(),
            msg: e.to_string(),
        }),
    }
}

fn get_usize(params: &Params, key: &str, default: usize) -> Result<usize, EvalError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.parse::<usize>().map_err(|e| EvalError::BadParam {
            key: key.to_string(),
            value: v.clone(),
            msg: e.to_string(),
        }),
    }
}

fn get_bool(params: &Params, key: &str, default: bool) -> Result<bool, EvalError> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => match v.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(EvalError::BadParam {
                key: key.to_string(),
                value: v.clone(),
                msg: "expected a boolean".into(),
            }),
        },
    }
}

fn check_known(family: &'static str, params: &Params, known: &[&str]) -> Result<(), EvalError> {
    for key in params.keys() {
        if !known.contains(&key.as_str()) {
            return Err(EvalError::UnknownParam { family, key: key.clone() });
        }
    }
    Ok(())
}

fn gpr_kernel_from(params: &Params) -> Result<KernelSpec, EvalError> {
    let length_scale = get_f64(params, "length_scale", 1.0)?;
    let signal_var = get_f64(params, "signal_var", 1.0)?;
    let noise_level = get_f64(params, "noise_level", 1.0)?;
    let scale = get_f64(params, "scale", 1.0)?;
    let rbf = KernelSpec::RbfLengthscale { lengthscale: length_scale, signal_var };
    let kind = params.get("kernel").map(String::as_str).unwrap_or("rbf+white");
    match kind {
        "rbf" => Ok(rbf),
        "rbf+white" => {
            Ok(KernelSpec::Sum(Box::new(rbf), Box::new(KernelSpec::White { noise_var: noise_level })))
        }
        "scaled_rbf" => Ok(KernelSpec::Scaled { scale, inner: Box::new(rbf) }),
        other => Err(EvalError::BadParam {
            key: "kernel".into(),
            value: other.to_string(),
            msg: "expected rbf, rbf+white or scaled_rbf".into(),
        }),
    }
}

/// Fit one family on a prepared (standardized) design matrix.
pub fn fit_family(
    family: Family,
    params: &Params,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    seed: u64,
) -> Result<ModelState, EvalError> {
    match family {
        Family::Lr => {
            check_known("lr", params, &[])?;
            Ok(ModelState::Linear(linear::fit_ols(x, y)?))
        }
        Family::Lasso => {
            check_known("lasso", params, &["alpha"])?;
            let alpha = get_f64(params, "alpha", 1e-4)?;
            Ok(ModelState::Linear(linear::fit_lasso(x, y, alpha)?))
        }
        Family::Ridge => {
            check_known("ridge", params, &["alpha"])?;
            let alpha = get_f64(params, "alpha", 1e-3)?;
            Ok(ModelState::Linear(linear::fit_ridge(x, y, alpha)?))
        }
        Family::ElasticNet => {
            check_known("elastic_net", params, &["alpha", "l1_ratio"])?;
            let alpha = get_f64(params, "alpha", 1e-4)?;
            let l1_ratio = get_f64(params, "l1_ratio", 0.5)?;
            let lambda1 = alpha * l1_ratio;
            let lambda2 = alpha * (1.0 - l1_ratio);
            Ok(ModelState::Linear(linear::fit_elastic_net(x, y, lambda1, lambda2)?))
        }
        Family::Rf => {
            check_known(
                "rf",
                params,
                &[
                    "n_estimators",
                    "max_depth",
                    "min_samples_leaf",
                    "min_samples_split",
                    "ccp_alpha",
                    "max_features",
                    "bootstrap",
                ],
            )?;
            let p = forest::ForestParams {
                n_estimators: get_usize(params, "n_estimators", 300)?,
                max_depth: get_usize(params, "max_depth", 12)?,
                min_samples_leaf: get_usize(params, "min_samples_leaf", 4)?,
                min_samples_split: get_usize(params, "min_samples_split", 8)?,
                ccp_alpha: get_f64(params, "ccp_alpha", 0.0001)?,
                max_features: get_f64(params, "max_features", 0.75)?,
                bootstrap: get_bool(params, "bootstrap", true)?,
            };
            Ok(ModelState::Forest(forest::fit_random_forest(x, y, &p, seed)?))
        }
        Family::Gbt => {
            check_known(
                "gbt",
                params,
                &[
                    "n_estimators",
                    "learning_rate",
                    "max_depth",
                    "min_child_weight",
                    "subsample",
                    "colsample_bytree",
                    "reg_lambda",
                    "reg_alpha",
                    "gamma",
                ],
            )?;
            let p = gbt::GbtParams {
                n_estimators: get_usize(params, "n_estimators", 500)?,
                learning_rate: get_f64(params, "learning_rate", 0.03)?,
                max_depth: get_usize(params, "max_depth", 6)?,
                min_child_weight: get_f64(params, "min_child_weight", 10.0)?,
                subsample: get_f64(params, "subsample", 0.8)?,
                colsample_bytree: get_f64(params, "colsample_bytree", 0.8)?,
                lambda: get_f64(params, "reg_lambda", 7.0)?,
                alpha: get_f64(params, "reg_alpha", 3.0)?,
                gamma: get_f64(params, "gamma", 0.0)?,
            };
            Ok(ModelState::Booster(gbt::fit_gbt(x, y, &p, seed)?))
        }
        Family::Svr => {
            check_known("svr", params, &["c", "epsilon", "gamma"])?;
            let c = get_f64(params, "c", 100.0)?;
            let epsilon = get_f64(params, "epsilon", 0.1)?;
            let gamma = get_f64(params, "gamma", 0.001)?;
            Ok(ModelState::Svr(svr::fit_svr(x, y, c, epsilon, gamma)?))
        }
        Family::Gpr => {
            check_known(
                "gpr",
                params,
                &["kernel", "length_scale", "signal_var", "noise_level", "scale", "alpha", "n_restarts"],
            )?;
            let kernel = gpr_kernel_from(params)?;
            let alpha = get_f64(params, "alpha", 1e-10)?;
            let restarts = get_usize(params, "n_restarts", 0)? as u32;
            Ok(ModelState::Gpr(gpr::fit_gpr(x, y, kernel, alpha, restarts, seed)?))
        }
        Family::Nn => {
            check_known(
                "nn",
                params,
                &[
                    "hidden",
                    "activation",
                    "dropout",
                    "optimizer",
                    "lr",
                    "weight_decay",
                    "momentum",
                    "epochs",
                    "batch_size",
                ],
            )?;
            let act_str = params.get("activation").map(String::as_str).unwrap_or("relu");
            let activation = mlp::Activation::parse(act_str).ok_or_else(|| EvalError::BadParam {
                key: "activation".into(),
                value: act_str.to_string(),
                msg: "expected relu or leakyrelu".into(),
            })?;
            let optimizer = match params.get("optimizer").map(String::as_str).unwrap_or("adam") {
                "adam" => mlp::OptimizerConfig::Adam {
                    lr: get_f64(params, "lr", 1e-3)?,
                    weight_decay: get_f64(params, "weight_decay", 0.0)?,
                },
                "sgd" => mlp::OptimizerConfig::Sgd {
                    lr: get_f64(params, "lr", 1e-3)?,
                    momentum: get_f64(params, "momentum", 0.0)?,
                },
                other => {
                    return Err(EvalError::BadParam {
                        key: "optimizer".into(),
                        value: other.to_string(),
                        msg: "expected adam or sgd".into(),
                    })
                }
            };
            let config = mlp::MlpConfig {
                hidden: get_usize(params, "hidden", 64)?,
                activation,
                dropout: get_f64(params, "dropout", 0.0)?,
                optimizer,
                epochs: get_usize(params, "epochs", 200)?,
                batch_size: get_usize(params, "batch_size", 128)?,
            };
            Ok(ModelState::Mlp(mlp::mlp_train(x, y, &config, seed)?))
        }
    }
}

/// Fit a family on raw features: standardize, fit, wrap as a saved model.
pub fn train_model(
    family: Family,
    params: &Params,
    ds: &Dataset,
    phase: Phase,
    seed: u64,
) -> Result<SavedModel, EvalError> {
    let x = design_matrix(ds);
    let y = target_vector(ds, phase);
    let (std, xs, _, _) = standardize_fit_apply(&x, &[])?;
    let state = fit_family(family, params, &xs, &y, seed)?;
    Ok(SavedModel {
        format_version: MODEL_FORMAT_VERSION,
        family: family.name().to_string(),
        target: phase.name().to_string(),
        feature_names: ds.feature_names().iter().map(|s| s.to_string()).collect(),
        standardizer: Some(std),
        state,
    })
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// An explicit hyperparameter grid: each entry lists the values of one
/// key, candidates are the cartesian product in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub entries: Vec<(String, Vec<String>)>,
}

impl ParamGrid {
    /// Parse the plain-text grid format: one `key = v1, v2, v3` line per
    /// hyperparameter, `#` comments.
    pub fn parse(text: &str) -> Result<ParamGrid, EvalError> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, values) = line.split_once('=').ok_or_else(|| EvalError::BadParam {
                key: line.to_string(),
                value: String::new(),
                msg: "expected `key = v1, v2`".into(),
            })?;
            let values: Vec<String> =
                values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(EvalError::BadParam {
                    key: key.trim().to_string(),
                    value: String::new(),
                    msg: "no values listed".into(),
                });
            }
            entries.push((key.trim().to_string(), values));
        }
        Ok(ParamGrid { entries })
    }

    pub fn singleton(params: &Params) -> ParamGrid {
        ParamGrid { entries: params.iter().map(|(k, v)| (k.clone(), vec![v.clone()])).collect() }
    }

    /// All candidates in deterministic (file) order.
    pub fn candidates(&self) -> Vec<Params> {
        let mut out: Vec<Params> = vec![Params::new()];
        for (key, values) in &self.entries {
            let mut next = Vec::with_capacity(out.len() * values.len());
            for base in &out {
                for v in values {
                    let mut p = base.clone();
                    p.insert(key.clone(), v.clone());
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub params: Params,
    pub fold_mapes: Vec<f64>,
    pub mean_mape: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub family: String,
    pub target: String,
    pub scores: Vec<CandidateScore>,
    pub best_index: usize,
    pub best_params: Params,
}

/// Per-fold standardization: statistics come from the fold's training rows
/// only, never from validation rows.
pub fn fold_standardizer(x: &DMatrix<f64>, train_rows: &[usize]) -> Standardizer {
    let sub = DMatrix::from_fn(train_rows.len(), x.ncols(), |i, j| x[(train_rows[i], j)]);
    let mut std = Standardizer::fit(&sub);
    let n = sub.nrows() as f64;
    for c in 0..sub.ncols() {
        let m = sub.column(c).iter().sum::<f64>() / n;
        let var = sub.column(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        if var == 0.0 {
            std.mean[c] = 0.0;
            std.sd[c] = 1.0;
        }
    }
    std
}

/// Exhaustive grid search with k-fold cross-validation, scored by mean
/// validation MAPE (lowest wins, ties to the earlier candidate). The best
/// candidate is refit on the full training set. Candidates that fail keep
/// their error in the score table and are skipped for selection.
pub fn grid_search(
    family: Family,
    grid: &ParamGrid,
    train: &Dataset,
    phase: Phase,
    k: usize,
    seed: u64,
) -> Result<(GridSearchResult, SavedModel), EvalError> {
    let candidates = grid.candidates();
    if candidates.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let n = train.len();
    let folds = kfold_indices(n, k, derive_seed(seed, "grid.folds", 0))?;
    let x = design_matrix(train);
    let y = target_vector(train, phase);

    let scores: Vec<CandidateScore> = candidates
        .par_iter()
        .enumerate()
        .map(|(ci, params)| score_candidate(family, params, ci, &folds, &x, &y, seed))
        .collect();

    let mut best_index = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(m) = s.mean_mape {
            if best_index.map(|b: usize| m < scores[b].mean_mape.unwrap()).unwrap_or(true) {
                best_index = Some(i);
            }
        }
    }
    let best_index = best_index.ok_or_else(|| {
        EvalError::AllCandidatesFailed(
            scores.iter().find_map(|s| s.error.clone()).unwrap_or_else(|| "no candidates".to_string()),
        )
    })?;

    let best_params = scores[best_index].params.clone();
    let model = train_model(family, &best_params, train, phase, derive_seed(seed, "grid.refit", 0))?;
    let result = GridSearchResult {
        family: family.name().to_string(),
        target: phase.name().to_string(),
        scores,
        best_index,
        best_params,
    };
    Ok((result, model))
}

fn score_candidate(
    family: Family,
    params: &Params,
    ci: usize,
    folds: &[Vec<usize>],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    seed: u64,
) -> CandidateScore {
    let n = x.nrows();
    let mut fold_mapes = Vec::with_capacity(folds.len());
    let fail = |fold_mapes: Vec<f64>, e: String| CandidateScore {
        params: params.clone(),
        fold_mapes,
        mean_mape: None,
        error: Some(e),
    };
    for (fi, val_rows) in folds.iter().enumerate() {
        let mut in_val = vec![false; n];
        for r in val_rows {
            in_val[*r] = true;
        }
        let train_rows: Vec<usize> = (0..n).filter(|r| !in_val[*r]).collect();
        let std = fold_standardizer(x, &train_rows);
        let xt = DMatrix::from_fn(train_rows.len(), x.ncols(), |i, j| x[(train_rows[i], j)]);
        let xv = DMatrix::from_fn(val_rows.len(), x.ncols(), |i, j| x[(val_rows[i], j)]);
        let yt = DVector::from_fn(train_rows.len(), |i, _| y[train_rows[i]]);
        let yv: Vec<f64> = val_rows.iter().map(|r| y[*r]).collect();
        let fit_seed = derive_seed(seed, "grid.fit", (ci * folds.len() + fi) as u64);
        let state = match fit_family(family, params, &std.transform(&xt), &yt, fit_seed) {
            Ok(s) => s,
            Err(e) => return fail(fold_mapes, e.to_string()),
        };
        let pred = match state.predict(&std.transform(&xv)) {
            Ok(p) => p,
            Err(e) => return fail(fold_mapes, e.to_string()),
        };
        match mape(&yv, pred.as_slice()) {
            Ok(m) => fold_mapes.push(m),
            Err(e) => return fail(fold_mapes, e.to_string()),
        }
    }
    let mean = fold_mapes.iter().sum::<f64>() / fold_mapes.len() as f64;
    CandidateScore { params: params.clone(), fold_mapes, mean_mape: Some(mean), error: None }
}

/// Evaluate a saved model on every labeled split of a dataset.
pub fn evaluate_splits(
    model: &SavedModel,
    ds: &Dataset,
    phase: Phase,
) -> Result<Vec<(String, Metrics)>, EvalError> {
    let splits: Vec<Split> = match ds.split_labels() {
        Some(labels) => {
            let mut seen = Vec::new();
            for l in labels {
                if !seen.contains(l) {
                    seen.push(*l);
                }
            }
            seen
        }
        None => vec![],
    };
    let mut out = Vec::new();
    if splits.is_empty() {
        let x = design_matrix(ds);
        let pred = model.predict_raw(&x)?;
        let truth = target_vector(ds, phase);
        out.push(("all".to_string(), metrics(truth.as_slice(), pred.as_slice())?));
        return Ok(out);
    }
    for split in splits {
        let part = ds.filter_split(split);
        if part.is_empty() {
            continue;
        }
        let x = design_matrix(&part);
        let pred = model.predict_raw(&x)?;
        let truth = target_vector(&part, phase);
        out.push((split.name().to_string(), metrics(truth.as_slice(), pred.as_slice())?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
