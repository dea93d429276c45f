//! The regression model zoo behind one fit/predict contract.
//!
//! Every family consumes a dense row-major design matrix and produces a
//! serializable state. Model states are saved as one versioned JSON
//! document; floats survive the round trip bit-exactly, so a reloaded
//! model predicts identically.

pub mod forest;
pub mod gbt;
pub mod gpr;
pub mod kernel;
pub mod linear;
pub mod mlp;
pub mod svr;
pub mod tree;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected {expected} feature columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no training rows")]
    EmptyData,
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("kernel matrix is not positive definite even after jitter")]
    NotPositiveDefinite,
    #[error("training diverged: loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model format: {0}")]
    Format(String),
}

/// Uniform predict contract over a feature matrix.
pub trait Regressor {
    fn n_features(&self) -> usize;
    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError>;
}

pub(crate) fn check_dims(expected: usize, x: &DMatrix<f64>) -> Result<(), ModelError> {
    if x.ncols() != expected {
        return Err(ModelError::DimensionMismatch { expected, got: x.ncols() });
    }
    Ok(())
}

/// Per-column z-scoring fitted on training data. Population statistics;
/// constant columns pass through unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Standardizer {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            sd.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, sd }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for c in 0..x.ncols() {
            let m = self.mean[c];
            let s = self.sd[c];
            for v in out.column_mut(c).iter_mut() {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }
}

/// Serializable state of any model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelState {
    Linear(linear::LinearModelState),
    Svr(svr::SvrState),
    Gpr(gpr::GprState),
    Forest(forest::ForestState),
    Booster(gbt::BoosterState),
    Mlp(mlp::MlpState),
}

impl ModelState {
    pub fn family(&self) -> &'static str {
        match self {
            ModelState::Linear(s) => s.family_name(),
            ModelState::Svr(_) => "svr",
            ModelState::Gpr(_) => "gpr",
            ModelState::Forest(_) => "rf",
            ModelState::Booster(_) => "gbt",
            ModelState::Mlp(_) => "nn",
        }
    }
}

impl Regressor for ModelState {
    fn n_features(&self) -> usize {
        match self {
            ModelState::Linear(s) => s.n_features(),
            ModelState::Svr(s) => s.n_features(),
            ModelState::Gpr(s) => s.n_features(),
            ModelState::Forest(s) => s.n_features(),
            ModelState::Booster(s) => s.n_features(),
            ModelState::Mlp(s) => s.n_features(),
        }
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        match self {
            ModelState::Linear(s) => s.predict(x),
            ModelState::Svr(s) => s.predict(x),
            ModelState::Gpr(s) => s.predict(x),
            ModelState::Forest(s) => s.predict(x),
            ModelState::Booster(s) => s.predict(x),
            ModelState::Mlp(s) => s.predict(x),
        }
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained model plus everything needed to apply it to raw feature rows:
/// the pipeline-level standardizer and the canonical column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub family: String,
    pub target: String,
    pub feature_names: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub state: ModelState,
}

impl SavedModel {
    pub fn predict_raw(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        match &self.standardizer {
            Some(s) => {
                check_dims(s.n_features(), x)?;
                self.state.predict(&s.transform(x))
            }
            None => self.state.predict(x),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ModelError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<SavedModel, ModelError> {
        let json = std::fs::read_to_string(path)?;
        let model: SavedModel =
            serde_json::from_str(&json).map_err(|e| ModelError::Format(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}
