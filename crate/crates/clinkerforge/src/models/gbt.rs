//! Second-order gradient boosting with regularized trees.
//!
//! Squared loss: per round the booster fits a tree to the current
//! gradients (residuals) with unit hessians, optionally on a row
//! subsample and a per-tree column subsample, and adds the tree scaled by
//! the learning rate. With full sampling the training loss is
//! non-increasing round over round because every leaf weight exactly
//! minimizes its local quadratic model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, RegressionTree, TreeParams, TreeTarget};
use super::{check_dims, ModelError, Regressor};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// L1 penalty on leaf weights.
    pub alpha: f64,
    /// Per-split gain penalty.
    pub gamma: f64,
    /// Row fraction drawn per round, without replacement.
    pub subsample: f64,
    /// Column fraction drawn per tree.
    pub colsample_bytree: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: 6,
            min_child_weight: 1.0,
            lambda: 1.0,
            alpha: 0.0,
            gamma: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoosterState {
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
    pub params: GbtParams,
    pub n_features: usize,
    /// Mean squared training loss after each round.
    pub train_loss: Vec<f64>,
}

impl Regressor for BoosterState {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        check_dims(self.n_features, x)?;
        let mut out = DVector::from_element(x.nrows(), self.base_score);
        for tree in &self.trees {
            out += tree.predict(x)? * self.params.learning_rate;
        }
        Ok(out)
    }
}

pub fn fit_gbt(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &GbtParams,
    seed: u64,
) -> Result<BoosterState, ModelError> {
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(ModelError::InvalidParam(format!(
            "learning_rate must be in (0, 1], got {}",
            params.learning_rate
        )));
    }
    if !(0.0 < params.subsample && params.subsample <= 1.0)
        || !(0.0 < params.colsample_bytree && params.colsample_bytree <= 1.0)
    {
        return Err(ModelError::InvalidParam("sampling fractions must be in (0, 1]".into()));
    }
    if x.nrows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if y.len() != x.nrows() {
        return Err(ModelError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    let n = x.nrows();
    let p = x.ncols();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_child_weight: params.min_child_weight,
        lambda: params.lambda,
        alpha: params.alpha,
        gamma: params.gamma,
        ..TreeParams::default()
    };

    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut train_loss = Vec::with_capacity(params.n_estimators);
    let hessians = vec![1.0; n];
    for round in 0..params.n_estimators {
        let rows: Vec<usize> = if params.subsample < 1.0 {
            let mut rng = derive_rng(seed, "gbt.rows", round as u64);
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            let take = ((params.subsample * n as f64).round() as usize).clamp(1, n);
            all.truncate(take);
            all.sort_unstable();
            all
        } else {
            (0..n).collect()
        };
        let columns: Option<Vec<usize>> = if params.colsample_bytree < 1.0 {
            let mut rng = derive_rng(seed, "gbt.cols", round as u64);
            let mut all: Vec<usize> = (0..p).collect();
            all.shuffle(&mut rng);
            let take = ((params.colsample_bytree * p as f64).round() as usize).clamp(1, p);
            all.truncate(take);
            all.sort_unstable();
            Some(all)
        } else {
            None
        };
        let grads: Vec<f64> = (0..n).map(|i| pred[i] - y[i]).collect();
        let tree = fit_tree(
            x,
            TreeTarget::Gradients { grads: &grads, hessians: &hessians },
            &tree_params,
            Some(&rows),
            columns,
            None,
        )?;
        let mut row_buf = vec![0.0; p];
        for i in 0..n {
            for (j, v) in row_buf.iter_mut().enumerate() {
                *v = x[(i, j)];
            }
            pred[i] += params.learning_rate * tree.predict_row(&row_buf);
        }
        trees.push(tree);
        let loss = (0..n).map(|i| (pred[i] - y[i]).powi(2)).sum::<f64>() / n as f64;
        if !loss.is_finite() {
            return Err(ModelError::Diverged { step: round });
        }
        train_loss.push(loss);
    }

    Ok(BoosterState { base_score, trees, params: *params, n_features: p, train_loss })
}
