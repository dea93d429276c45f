//! Ordinary, ridge, lasso and elastic-net regression over one shared
//! linear predictor.
//!
//! Penalized objectives follow the mean-squared convention
//!
//! ```text
//! L(θ) = 1/(2n)·‖ỹ − X̃θ‖² + λ₁‖θ‖₁ + λ₂/2·‖θ‖²
//! ```
//!
//! fitted by cyclic coordinate descent on internally standardized columns
//! and a centered target; the intercept is never penalized. Under this
//! convention the smallest λ₁ that zeroes every weight is `max|X̃ᵀỹ|/n`,
//! elastic net reduces exactly to lasso at λ₂ = 0 and to ridge at λ₁ = 0,
//! and coefficients are reported back-transformed to raw feature units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_dims, ModelError, Regressor, Standardizer};

pub const CD_TOLERANCE: f64 = 1e-7;
pub const CD_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelState {
    /// Raw-space intercept.
    pub intercept: f64,
    /// Raw-space weights, one per feature column.
    pub weights: Vec<f64>,
    /// Weights in standardized coordinates (the optimizer's view).
    pub std_weights: Vec<f64>,
    pub standardizer: Standardizer,
    pub y_mean: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Coordinate descent hit the sweep cap; the state holds the best
    /// iterate rather than a converged one.
    pub max_iter_exceeded: bool,
    /// The design matrix was rank deficient; the minimum-norm solution is
    /// reported.
    pub rank_deficient: bool,
    pub sweeps: usize,
}

impl LinearModelState {
    pub fn family_name(&self) -> &'static str {
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            "lr"
        } else if self.lambda1 == 0.0 {
            "ridge"
        } else if self.lambda2 == 0.0 {
            "lasso"
        } else {
            "elastic_net"
        }
    }

    pub fn nonzero_weights(&self) -> usize {
        self.std_weights.iter().filter(|w| **w != 0.0).count()
    }
}

impl Regressor for LinearModelState {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        check_dims(self.weights.len(), x)?;
        let w = DVector::from_column_slice(&self.weights);
        let mut out = x * w;
        out.add_scalar_mut(self.intercept);
        Ok(out)
    }
}

fn standardize_problem(x: &DMatrix<f64>, y: &DVector<f64>) -> (Standardizer, DMatrix<f64>, DVector<f64>, f64) {
    let standardizer = Standardizer::fit(x);
    let xs = standardizer.transform(x);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc = y.map(|v| v - y_mean);
    (standardizer, xs, yc, y_mean)
}

fn finish(
    standardizer: Standardizer,
    std_weights: Vec<f64>,
    y_mean: f64,
    lambda1: f64,
    lambda2: f64,
    max_iter_exceeded: bool,
    rank_deficient: bool,
    sweeps: usize,
) -> LinearModelState {
    let weights: Vec<f64> =
        std_weights.iter().zip(standardizer.sd.iter()).map(|(w, s)| w / s).collect();
    let intercept =
        y_mean - weights.iter().zip(standardizer.mean.iter()).map(|(w, m)| w * m).sum::<f64>();
    LinearModelState {
        intercept,
        weights,
        std_weights,
        standardizer,
        y_mean,
        lambda1,
        lambda2,
        max_iter_exceeded,
        rank_deficient,
        sweeps,
    }
}

fn check_fit_input(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(), ModelError> {
    if x.nrows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if x.nrows() != y.len() {
        return Err(ModelError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    Ok(())
}

/// Least squares via singular value decomposition; rank deficiency is
/// reported on the state and resolved by the minimum-norm solution.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModelState, ModelError> {
    check_fit_input(x, y)?;
    if x.nrows() < x.ncols() + 1 {
        return Err(ModelError::TooFewRows { need: x.ncols() + 1, got: x.nrows() });
    }
    let (standardizer, xs, yc, y_mean) = standardize_problem(x, y);
    let svd = xs.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = 1e-10 * max_sv.max(1.0);
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let beta = svd.solve(&yc, eps).map_err(|e| ModelError::Format(e.to_string()))?;
    Ok(finish(
        standardizer,
        beta.iter().copied().collect(),
        y_mean,
        0.0,
        0.0,
        false,
        rank < xs.ncols(),
        0,
    ))
}

/// Ridge regression solved from the regularized normal equations.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda2: f64) -> Result<LinearModelState, ModelError> {
    if lambda2 < 0.0 {
        return Err(ModelError::InvalidParam(format!("lambda2 must be nonnegative, got {lambda2}")));
    }
    if lambda2 == 0.0 {
        return fit_ols(x, y);
    }
    check_fit_input(x, y)?;
    let (standardizer, xs, yc, y_mean) = standardize_problem(x, y);
    let n = xs.nrows() as f64;
    let p = xs.ncols();
    let mut gram = xs.transpose() * &xs;
    for i in 0..p {
        gram[(i, i)] += n * lambda2;
    }
    let rhs = xs.transpose() * &yc;
    let beta = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(ModelError::NotPositiveDefinite)?;
    let mut state = finish(
        standardizer,
        beta.iter().copied().collect(),
        y_mean,
        0.0,
        lambda2,
        false,
        false,
        0,
    );
    state.lambda1 = 0.0;
    Ok(state)
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for the elastic-net objective. Returns the
/// standardized weights, the sweep count, whether the cap was hit, and the
/// per-sweep objective values.
fn coordinate_descent(
    xs: &DMatrix<f64>,
    yc: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> (Vec<f64>, usize, bool, Vec<f64>) {
    let n = xs.nrows() as f64;
    let p = xs.ncols();
    // Column self-products; standardized columns give 1 except constant ones.
    let col_sq: Vec<f64> = (0..p).map(|j| xs.column(j).dot(&xs.column(j)) / n).collect();
    let mut theta = vec![0.0; p];
    let mut residual = yc.clone();
    let mut objective_trace = Vec::new();
    let mut sweeps = 0;
    let mut capped = false;
    loop {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = xs.column(j);
            let rho = col.dot(&residual) / n + col_sq[j] * theta[j];
            let new = soft_threshold(rho, lambda1) / (col_sq[j] + lambda2);
            let delta = new - theta[j];
            if delta != 0.0 {
                residual.axpy(-delta, &col, 1.0);
                theta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        sweeps += 1;
        let obj = residual.norm_squared() / (2.0 * n)
            + lambda1 * theta.iter().map(|t| t.abs()).sum::<f64>()
            + 0.5 * lambda2 * theta.iter().map(|t| t * t).sum::<f64>();
        objective_trace.push(obj);
        if max_delta < CD_TOLERANCE {
            break;
        }
        if sweeps >= CD_MAX_SWEEPS {
            capped = true;
            break;
        }
    }
    (theta, sweeps, capped, objective_trace)
}

/// Lasso; exact zeros are produced by the soft-threshold update.
pub fn fit_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda1: f64) -> Result<LinearModelState, ModelError> {
    fit_elastic_net(x, y, lambda1, 0.0)
}

/// Elastic net; reduces to lasso at λ₂ = 0, to ridge at λ₁ = 0 and to
/// ordinary least squares when both vanish.
pub fn fit_elastic_net(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Result<LinearModelState, ModelError> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(ModelError::InvalidParam("penalties must be nonnegative".into()));
    }
    if lambda1 == 0.0 {
        let mut state = if lambda2 == 0.0 { fit_ols(x, y)? } else { fit_ridge(x, y, lambda2)? };
        state.lambda1 = 0.0;
        return Ok(state);
    }
    check_fit_input(x, y)?;
    let (standardizer, xs, yc, y_mean) = standardize_problem(x, y);
    let (theta, sweeps, capped, _trace) = coordinate_descent(&xs, &yc, lambda1, lambda2);
    Ok(finish(standardizer, theta, y_mean, lambda1, lambda2, capped, false, sweeps))
}

/// Smallest λ₁ at which the lasso solution is identically zero.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let (_, xs, yc, _) = standardize_problem(x, y);
    let n = xs.nrows() as f64;
    (0..xs.ncols())
        .map(|j| (xs.column(j).dot(&yc) / n).abs())
        .fold(0.0, f64::max)
}

/// Worst violation of the elastic-net first-order optimality conditions at
/// the fitted point, in the standardized coordinates the optimizer used.
pub fn kkt_residual(x: &DMatrix<f64>, y: &DVector<f64>, state: &LinearModelState) -> f64 {
    let xs = state.standardizer.transform(x);
    let yc = y.map(|v| v - state.y_mean);
    let n = xs.nrows() as f64;
    let theta = DVector::from_column_slice(&state.std_weights);
    let residual = &yc - &xs * &theta;
    let grad = xs.transpose() * &residual / n; // −∂RSS-part, sign folded below
    let mut worst = 0.0f64;
    for j in 0..xs.ncols() {
        let g = -grad[j] + state.lambda2 * theta[j];
        let v = if theta[j] != 0.0 {
            (g + state.lambda1 * theta[j].signum()).abs()
        } else {
            (g.abs() - state.lambda1).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Expose the per-sweep objective for convergence diagnostics.
pub fn coordinate_descent_trace(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
) -> Vec<f64> {
    let (_, xs, yc, _) = standardize_problem(x, y);
    coordinate_descent(&xs, &yc, lambda1, lambda2).3
}
