//! ε-insensitive support vector regression solved by sequential minimal
//! optimization.
//!
//! The dual problem is minimized over the paired box variables (α, α*)
//! with the balance constraint Σ(αᵢ−α*ᵢ) = 0. Each step picks the
//! maximal-KKT-violating pair across the 2n variables and solves its
//! two-variable subproblem analytically; termination is a KKT violation
//! below the requested tolerance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use super::{check_dims, ModelError, Regressor};

pub const SVR_KKT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrState {
    /// Rows with nonzero dual coefficient.
    pub support_vectors: Vec<Vec<f64>>,
    /// β = α − α* at the support vectors; |β| ≤ C.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub kernel: KernelSpec,
    pub c: f64,
    pub epsilon: f64,
    pub n_features: usize,
    /// The pair-update cap was reached before the KKT tolerance.
    pub max_iter_exceeded: bool,
    pub iterations: usize,
}

impl SvrState {
    pub fn n_support(&self) -> usize {
        self.support_vectors.len()
    }

    /// Worst-case duality-balance drift: Σβ should be zero.
    pub fn coef_balance(&self) -> f64 {
        self.dual_coefs.iter().sum()
    }
}

impl Regressor for SvrState {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        check_dims(self.n_features, x)?;
        let mut out = DVector::from_element(x.nrows(), self.bias);
        for i in 0..x.nrows() {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            for (sv, beta) in self.support_vectors.iter().zip(self.dual_coefs.iter()) {
                out[i] += beta * self.kernel.eval_no_white(sv, &xi);
            }
        }
        Ok(out)
    }
}

/// Fit with the standard tolerance.
pub fn fit_svr(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: f64,
    epsilon: f64,
    gamma: f64,
) -> Result<SvrState, ModelError> {
    fit_svr_with(x, y, c, epsilon, KernelSpec::RbfGamma { gamma }, SVR_KKT_TOL, 0)
}

/// Fit with an explicit kernel, KKT tolerance and iteration cap
/// (0 = choose automatically).
pub fn fit_svr_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: f64,
    epsilon: f64,
    kernel: KernelSpec,
    tol: f64,
    max_iter: usize,
) -> Result<SvrState, ModelError> {
    if c <= 0.0 {
        return Err(ModelError::InvalidParam(format!("C must be positive, got {c}")));
    }
    if epsilon < 0.0 {
        return Err(ModelError::InvalidParam(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    kernel.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(ModelError::EmptyData);
    }
    if y.len() != n {
        return Err(ModelError::DimensionMismatch { expected: n, got: y.len() });
    }
    let max_iter = if max_iter == 0 { 200_000.max(200 * n) } else { max_iter };
    let gram = kernel.gram(x);

    // Variable k < n is αₖ (sign +1), k ≥ n is α*ₖ₋ₙ (sign −1).
    let sign = |k: usize| if k < n { 1.0 } else { -1.0 };
    let data = |k: usize| if k < n { k } else { k - n };
    let mut v = vec![0.0f64; 2 * n];
    // f[d] = Σ β_j K_dj; β starts at zero.
    let mut f = vec![0.0f64; n];

    let mut iterations = 0;
    let mut capped = false;
    loop {
        // Violation value of variable k is F_d − s·ε with F_d = y_d − f_d.
        let mut up_best: Option<(usize, f64)> = None;
        let mut low_best: Option<(usize, f64)> = None;
        for k in 0..2 * n {
            let d = data(k);
            let s = sign(k);
            let value = (y[d] - f[d]) - s * epsilon;
            let in_up = if k < n { v[k] < c } else { v[k] > 0.0 };
            let in_low = if k < n { v[k] > 0.0 } else { v[k] < c };
            if in_up && up_best.map(|(_, b)| value > b).unwrap_or(true) {
                up_best = Some((k, value));
            }
            if in_low && low_best.map(|(_, b)| value < b).unwrap_or(true) {
                low_best = Some((k, value));
            }
        }
        let (i, m_up) = up_best.expect("nonempty up set");
        let (j, m_low) = low_best.expect("nonempty low set");
        if m_up - m_low <= tol {
            break;
        }
        if iterations >= max_iter {
            capped = true;
            break;
        }
        iterations += 1;

        let (di, dj) = (data(i), data(j));
        let (si, sj) = (sign(i), sign(j));
        let quad = gram[(di, di)] + gram[(dj, dj)] - 2.0 * gram[(di, dj)];
        // Step t moves β_di by +t and β_dj by −t.
        let mut t = if quad > 1e-12 { (m_up - m_low) / quad } else { f64::INFINITY };
        let cap_i = if si > 0.0 { c - v[i] } else { v[i] };
        let cap_j = if sj > 0.0 { v[j] } else { c - v[j] };
        t = t.min(cap_i).min(cap_j);
        if !(t > 0.0) {
            // Numerically stuck pair; nothing can move.
            break;
        }
        v[i] += si * t;
        v[j] -= sj * t;
        for d in 0..n {
            f[d] += t * (gram[(d, di)] - gram[(d, dj)]);
        }
    }

    // Recompute the final KKT band for the bias.
    let mut m_up = f64::NEG_INFINITY;
    let mut m_low = f64::INFINITY;
    for k in 0..2 * n {
        let d = data(k);
        let s = sign(k);
        let value = (y[d] - f[d]) - s * epsilon;
        let in_up = if k < n { v[k] < c } else { v[k] > 0.0 };
        let in_low = if k < n { v[k] > 0.0 } else { v[k] < c };
        if in_up {
            m_up = m_up.max(value);
        }
        if in_low {
            m_low = m_low.min(value);
        }
    }
    let bias = 0.5 * (m_up + m_low);

    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for d in 0..n {
        let beta = v[d] - v[d + n];
        if beta != 0.0 {
            support_vectors.push(x.row(d).iter().copied().collect());
            dual_coefs.push(beta);
        }
    }
    Ok(SvrState {
        support_vectors,
        dual_coefs,
        bias,
        kernel,
        c,
        epsilon,
        n_features: x.ncols(),
        max_iter_exceeded: capped,
        iterations,
    })
}

/// Dual objective (minimization form) of a full (α, α*) assignment; used
/// by oracle comparisons.
pub fn dual_objective(gram: &DMatrix<f64>, y: &DVector<f64>, epsilon: f64, v: &[f64]) -> f64 {
    let n = y.len();
    let beta: Vec<f64> = (0..n).map(|d| v[d] - v[d + n]).collect();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * beta[j] * gram[(i, j)];
        }
    }
    let eps_term: f64 = v.iter().sum::<f64>() * epsilon;
    let lin: f64 = (0..n).map(|d| y[d] * beta[d]).sum();
    0.5 * quad + eps_term - lin
}

/// The fitted model's dual variables reconstructed as an (α, α*) vector.
pub fn state_dual_variables(state: &SvrState, x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut v = vec![0.0; 2 * n];
    for (sv, beta) in state.support_vectors.iter().zip(state.dual_coefs.iter()) {
        for d in 0..n {
            let row: Vec<f64> = x.row(d).iter().copied().collect();
            if row == *sv {
                if *beta > 0.0 {
                    v[d] = *beta;
                } else {
                    v[d + n] = -*beta;
                }
                break;
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn toy_problem() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_row_slice(6, 1, &[-2.0, -1.2, -0.3, 0.4, 1.1, 2.0]);
        let y = DVector::from_column_slice(&[0.3, 0.8, 1.9, 2.4, 1.6, 0.5]);
        (x, y)
    }

    #[test]
    fn constant_target_needs_no_support_vectors() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_element(5, 3.7);
        let state = fit_svr(&x, &y, 10.0, 0.1, 0.5).unwrap();
        assert_eq!(state.n_support(), 0);
        assert_abs_diff_eq!(state.bias, 3.7, epsilon = 1e-9);
        let pred = state.predict(&x).unwrap();
        assert_abs_diff_eq!(pred[2], 3.7, epsilon = 1e-9);
    }

    /// Independent oracle: projected gradient descent on the boxed dual
    /// with the balance constraint enforced by an exact projection.
    fn projected_gradient_oracle(
        gram: &DMatrix<f64>,
        y: &DVector<f64>,
        c: f64,
        epsilon: f64,
        iters: usize,
    ) -> Vec<f64> {
        let n = y.len();
        let mut v = vec![0.0f64; 2 * n];
        // Lipschitz bound for the step size.
        let lip = 2.0 * gram.iter().map(|g| g.abs()).fold(0.0, f64::max) * n as f64 + 1.0;
        let step = 1.0 / lip;
        let project = |v: &mut Vec<f64>| {
            // Find nu so that sum_k s_k clip(v_k - nu s_k, 0, C) = 0.
            let (mut lo, mut hi) = (-(c + 1.0), c + 1.0);
            for _ in 0..200 {
                let nu = 0.5 * (lo + hi);
                let mut balance = 0.0;
                for k in 0..2 * n {
                    let s = if k < n { 1.0 } else { -1.0 };
                    balance += s * (v[k] - nu * s).clamp(0.0, c);
                }
                if balance > 0.0 {
                    lo = nu;
                } else {
                    hi = nu;
                }
            }
            let nu = 0.5 * (lo + hi);
            for k in 0..2 * n {
                let s = if k < n { 1.0 } else { -1.0 };
                v[k] = (v[k] - nu * s).clamp(0.0, c);
            }
        };
        for _ in 0..iters {
            let beta: Vec<f64> = (0..n).map(|d| v[d] - v[d + n]).collect();
            let kb: Vec<f64> = (0..n).map(|d| (0..n).map(|j| gram[(d, j)] * beta[j]).sum()).collect();
            let mut g = vec![0.0; 2 * n];
            for d in 0..n {
                g[d] = kb[d] + epsilon - y[d];
                g[d + n] = -kb[d] + epsilon + y[d];
            }
            for k in 0..2 * n {
                v[k] -= step * g[k];
            }
            project(&mut v);
        }
        v
    }

    #[test]
    fn smo_matches_projected_gradient_oracle_on_tiny_problem() {
        let (x, y) = toy_problem();
        let kernel = KernelSpec::RbfGamma { gamma: 0.8 };
        let state = fit_svr_with(&x, &y, 5.0, 0.05, kernel.clone(), 1e-6, 0).unwrap();
        let gram = kernel.gram(&x);
        let oracle_v = projected_gradient_oracle(&gram, &y, 5.0, 0.05, 50_000);

        let smo_v = state_dual_variables(&state, &x);
        let smo_obj = dual_objective(&gram, &y, 0.05, &smo_v);
        let oracle_obj = dual_objective(&gram, &y, 0.05, &oracle_v);
        assert!(
            (smo_obj - oracle_obj).abs() <= 1e-4,
            "dual objective gap: smo {smo_obj} vs oracle {oracle_obj}"
        );

        // Predictions from the oracle's beta, with the oracle's own bias
        // estimated from a free variable.
        let beta: Vec<f64> = (0..6).map(|d| oracle_v[d] - oracle_v[d + 6]).collect();
        let mut bias_candidates = Vec::new();
        for d in 0..6 {
            let fd: f64 = (0..6).map(|j| gram[(d, j)] * beta[j]).sum();
            if oracle_v[d] > 1e-6 && oracle_v[d] < 5.0 - 1e-6 {
                bias_candidates.push(y[d] - fd - 0.05);
            }
            if oracle_v[d + 6] > 1e-6 && oracle_v[d + 6] < 5.0 - 1e-6 {
                bias_candidates.push(y[d] - fd + 0.05);
            }
        }
        if !bias_candidates.is_empty() {
            let oracle_bias: f64 = bias_candidates.iter().sum::<f64>() / bias_candidates.len() as f64;
            assert_abs_diff_eq!(state.bias, oracle_bias, epsilon = 1e-3);
        }
        for d in 0..6 {
            let fd: f64 = (0..6).map(|j| gram[(d, j)] * beta[j]).sum::<f64>() + state.bias;
            let query = DMatrix::from_row_slice(1, 1, &[x[(d, 0)]]);
            let pred = state.predict(&query).unwrap()[0];
            assert_abs_diff_eq!(pred, fd, epsilon = 1e-3);
        }
    }

    #[test]
    fn training_points_inside_tube_are_not_support_vectors() {
        let (x, y) = toy_problem();
        let state = fit_svr(&x, &y, 20.0, 0.2, 0.7).unwrap();
        let pred = state.predict(&x).unwrap();
        for d in 0..x.nrows() {
            let row: Vec<f64> = x.row(d).iter().copied().collect();
            let is_sv = state.support_vectors.iter().any(|sv| *sv == row);
            if !is_sv {
                assert!(
                    (y[d] - pred[d]).abs() <= state.epsilon + 1e-6,
                    "non-SV point outside the tube"
                );
            }
        }
    }

    #[test]
    fn dual_coefficients_balance_and_respect_box() {
        let mut rng = derive_rng(3, "test.svr", 0);
        let x = DMatrix::from_fn(40, 2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y = DVector::from_fn(40, |i, _| (x[(i, 0)] * 1.3).sin() + 0.4 * x[(i, 1)]);
        let state = fit_svr(&x, &y, 3.0, 0.05, 0.6).unwrap();
        assert!(state.coef_balance().abs() <= 1e-6);
        for beta in &state.dual_coefs {
            assert!(beta.abs() <= 3.0 + 1e-12);
        }
        assert!(!state.max_iter_exceeded);
    }

    #[test]
    fn reference_hyperparameters_are_accepted_and_stored() {
        let (x, y) = toy_problem();
        let state = fit_svr(&x, &y, 100.0, 0.1, 0.001).unwrap();
        assert_eq!(state.c, 100.0);
        assert_eq!(state.kernel, KernelSpec::RbfGamma { gamma: 0.001 });
        assert_eq!(state.epsilon, 0.1);
    }

    #[test]
    fn predictions_are_invariant_to_training_order() {
        let mut rng = derive_rng(4, "test.svr.perm", 0);
        let x = DMatrix::from_fn(30, 2, |_, _| rng.random::<f64>() * 2.0);
        let y = DVector::from_fn(30, |i, _| x[(i, 0)] + (x[(i, 1)] * 2.0).cos());
        let kernel = KernelSpec::RbfGamma { gamma: 0.9 };
        let a = fit_svr_with(&x, &y, 4.0, 0.02, kernel.clone(), 1e-10, 2_000_000).unwrap();

        let perm: Vec<usize> = (0..30).rev().collect();
        let xp = DMatrix::from_fn(30, 2, |i, j| x[(perm[i], j)]);
        let yp = DVector::from_fn(30, |i, _| y[perm[i]]);
        let b = fit_svr_with(&xp, &yp, 4.0, 0.02, kernel, 1e-10, 2_000_000).unwrap();

        let q = DMatrix::from_fn(7, 2, |i, j| 0.3 * i as f64 + 0.1 * j as f64);
        let pa = a.predict(&q).unwrap();
        let pb = b.predict(&q).unwrap();
        for i in 0..7 {
            assert_abs_diff_eq!(pa[i], pb[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn serialized_state_predicts_identically() {
        let (x, y) = toy_problem();
        let state = fit_svr(&x, &y, 5.0, 0.05, 0.8).unwrap();
        let json = serde_json::to_string(&state).unwrap();
        let back: SvrState = serde_json::from_str(&json).unwrap();
        let a = state.predict(&x).unwrap();
        let b = back.predict(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let (x, y) = toy_problem();
        assert!(fit_svr(&x, &y, -1.0, 0.1, 0.5).is_err());
        assert!(fit_svr(&x, &y, 1.0, -0.1, 0.5).is_err());
        assert!(fit_svr(&x, &y, 1.0, 0.1, -0.5).is_err());
    }
}
