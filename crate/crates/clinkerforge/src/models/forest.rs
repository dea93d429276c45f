//! Bagged random forests over the CART builder.
//!
//! Each tree trains on a bootstrap resample with per-node feature
//! subsampling; the ensemble prediction is the plain average of tree
//! outputs. Rows left out of a tree's bootstrap form its out-of-bag set,
//! and the out-of-bag mean squared error is the forest's self-estimate of
//! generalization error.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, RegressionTree, TreeParams, TreeTarget};
use super::{check_dims, ModelError, Regressor};
use crate::rng::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub ccp_alpha: f64,
    /// Fraction of features drawn per node.
    pub max_features: f64,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            max_depth: 12,
            min_samples_leaf: 1,
            min_samples_split: 2,
            ccp_alpha: 0.0,
            max_features: 1.0,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestState {
    pub trees: Vec<RegressionTree>,
    pub params: ForestParams,
    pub n_features: usize,
    /// Mean squared error over out-of-bag predictions, when bootstrap was
    /// on and every row had at least one out-of-bag tree.
    pub oob_mse: Option<f64>,
}

impl Regressor for ForestState {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        check_dims(self.n_features, x)?;
        let mut out = DVector::zeros(x.nrows());
        for tree in &self.trees {
            out += tree.predict(x)?;
        }
        Ok(out / self.trees.len() as f64)
    }
}

pub fn fit_random_forest(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &ForestParams,
    seed: u64,
) -> Result<ForestState, ModelError> {
    if params.n_estimators == 0 {
        return Err(ModelError::InvalidParam("n_estimators must be at least 1".into()));
    }
    if x.nrows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if y.len() != x.nrows() {
        return Err(ModelError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    let n = x.nrows();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        min_samples_split: params.min_samples_split,
        ccp_alpha: params.ccp_alpha,
        max_features: params.max_features,
        ..TreeParams::default()
    };

    // Per-tree seeds are derived up front so the parallel fit is
    // order-independent.
    let fits: Vec<(RegressionTree, Vec<usize>)> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut boot_rng = derive_rng(seed, "rf.bootstrap", t as u64);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| boot_rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut feat_rng = derive_rng(seed, "rf.features", t as u64);
            let rng_opt = if params.max_features < 1.0 { Some(&mut feat_rng) } else { None };
            let tree = fit_tree(x, TreeTarget::Squared(y), &tree_params, Some(&rows), None, rng_opt)
                .expect("forest tree fit");
            (tree, rows)
        })
        .collect();

    let trees: Vec<RegressionTree> = fits.iter().map(|(t, _)| t.clone()).collect();

    let oob_mse = if params.bootstrap {
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        let mut row = vec![0.0; x.ncols()];
        for (tree, rows) in &fits {
            let mut in_bag = vec![false; n];
            for r in rows {
                in_bag[*r] = true;
            }
            for i in 0..n {
                if !in_bag[i] {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = x[(i, j)];
                    }
                    sums[i] += tree.predict_row(&row);
                    counts[i] += 1;
                }
            }
        }
        let mut sq = 0.0;
        let mut m = 0usize;
        for i in 0..n {
            if counts[i] > 0 {
                let e = sums[i] / counts[i] as f64 - y[i];
                sq += e * e;
                m += 1;
            }
        }
        if m > 0 {
            Some(sq / m as f64)
        } else {
            None
        }
    } else {
        None
    };

    Ok(ForestState { trees, params: *params, n_features: x.ncols(), oob_mse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn benchmark(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = crate::rng::derive_rng(seed, "test.forest.data", 0);
        let x = DMatrix::from_fn(n, 4, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y = DVector::from_fn(n, |i, _| {
            (x[(i, 0)] * 1.3).sin() * 2.0 + x[(i, 1)].powi(2) * 0.5 - x[(i, 2)]
                + 0.05 * rng.random::<f64>()
        });
        (x, y)
    }

    #[test]
    fn degenerate_forest_equals_single_tree() {
        let (x, y) = benchmark(60, 1);
        let params = ForestParams {
            n_estimators: 1,
            bootstrap: false,
            max_features: 1.0,
            max_depth: 5,
            ..ForestParams::default()
        };
        let forest = fit_random_forest(&x, &y, &params, 3).unwrap();
        let tree_params = TreeParams { max_depth: 5, ..TreeParams::default() };
        let tree = fit_tree(&x, TreeTarget::Squared(&y), &tree_params, None, None, None).unwrap();
        let fp = forest.predict(&x).unwrap();
        let tp = tree.predict(&x).unwrap();
        for i in 0..x.nrows() {
            assert_abs_diff_eq!(fp[i], tp[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn reference_hyperparameters_are_accepted() {
        let (x, y) = benchmark(80, 2);
        let params = ForestParams {
            n_estimators: 300,
            max_depth: 12,
            max_features: 0.75,
            ccp_alpha: 0.0001,
            min_samples_leaf: 4,
            min_samples_split: 8,
            bootstrap: true,
        };
        let forest = fit_random_forest(&x, &y, &params, 0).unwrap();
        assert_eq!(forest.trees.len(), 300);
        assert_eq!(forest.params.max_features, 0.75);
        assert!(forest.oob_mse.is_some());
    }

    #[test]
    fn same_seed_reproduces_the_forest() {
        let (x, y) = benchmark(50, 3);
        let params = ForestParams { n_estimators: 20, max_features: 0.5, ..ForestParams::default() };
        let a = fit_random_forest(&x, &y, &params, 11).unwrap();
        let b = fit_random_forest(&x, &y, &params, 11).unwrap();
        assert_eq!(a, b);
        let c = fit_random_forest(&x, &y, &params, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prediction_stays_within_tree_envelope() {
        let (x, y) = benchmark(70, 4);
        let params = ForestParams { n_estimators: 15, max_depth: 4, ..ForestParams::default() };
        let forest = fit_random_forest(&x, &y, &params, 5).unwrap();
        let preds: Vec<DVector<f64>> =
            forest.trees.iter().map(|t| t.predict(&x).unwrap()).collect();
        let ensemble = forest.predict(&x).unwrap();
        for i in 0..x.nrows() {
            let lo = preds.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
            let hi = preds.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
            assert!(ensemble[i] >= lo - 1e-12 && ensemble[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn more_trees_reduce_oob_error() {
        let (x, y) = benchmark(200, 5);
        let small = ForestParams { n_estimators: 1, max_depth: 8, ..ForestParams::default() };
        let large = ForestParams { n_estimators: 100, max_depth: 8, ..ForestParams::default() };
        let a = fit_random_forest(&x, &y, &small, 7).unwrap().oob_mse.unwrap();
        let b = fit_random_forest(&x, &y, &large, 7).unwrap().oob_mse.unwrap();
        assert!(b <= a, "oob mse grew from {a} to {b} with more trees");
    }
}
