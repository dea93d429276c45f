//! Gaussian process regression with RBF-family kernels.
//!
//! Targets are standardized inside the model (the predictive equations
//! assume a zero prior mean) and back-transformed on predict. The Gram
//! factorization is cached as a Cholesky factor; hyperparameters are
//! optionally tuned by multi-start Nelder-Mead over the log marginal
//! likelihood inside per-parameter bounds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use super::{check_dims, ModelError, Regressor};
use crate::rng::derive_rng;

/// Desk-scale cap on training rows; the dense factorization is cubic.
pub const GPR_MAX_ROWS: usize = 4_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprState {
    pub x_train: DMatrix<f64>,
    pub kernel: KernelSpec,
    /// Extra diagonal regularization added to the Gram matrix.
    pub alpha_reg: f64,
    /// Lower Cholesky factor of K + α·I (white noise included in K).
    pub chol_lower: DMatrix<f64>,
    /// (K + α·I)⁻¹ ỹ for the standardized targets.
    pub alpha_vec: DVector<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
    pub restarts: u32,
    pub log_marginal_likelihood: f64,
    /// Jitter that had to be added before the factorization succeeded.
    pub jitter_used: f64,
}

impl GprState {
    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }
}

impl Regressor for GprState {
    fn n_features(&self) -> usize {
        self.x_train.ncols()
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        Ok(self.predict_full(x)?.0)
    }
}

fn standardize_targets(y: &DVector<f64>) -> (DVector<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    (y.map(|v| (v - mean) / sd), mean, sd)
}

fn cholesky_with_jitter(
    gram: &DMatrix<f64>,
    alpha: f64,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64), ModelError> {
    let n = gram.nrows();
    let mut reg = gram.clone();
    for i in 0..n {
        reg[(i, i)] += alpha;
    }
    if let Some(chol) = reg.clone().cholesky() {
        return Ok((chol, 0.0));
    }
    let trace: f64 = (0..n).map(|i| gram[(i, i)]).sum();
    let mut jitter = 1e-10 * trace / n as f64;
    for _ in 0..3 {
        let mut attempt = reg.clone();
        for i in 0..n {
            attempt[(i, i)] += jitter;
        }
        if let Some(chol) = attempt.cholesky() {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(ModelError::NotPositiveDefinite)
}

fn log_marginal_likelihood(
    x: &DMatrix<f64>,
    ys: &DVector<f64>,
    kernel: &KernelSpec,
    alpha: f64,
) -> Result<f64, ModelError> {
    let gram = kernel.gram(x);
    let (chol, _) = cholesky_with_jitter(&gram, alpha)?;
    let alpha_vec = chol.solve(ys);
    let log_det: f64 = (0..x.nrows()).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let n = x.nrows() as f64;
    Ok(-0.5 * ys.dot(&alpha_vec) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

// --- hyperparameter vector view ---------------------------------------------

fn collect_params(kernel: &KernelSpec, out: &mut Vec<f64>) {
    match kernel {
        KernelSpec::RbfGamma { gamma } => out.push(*gamma),
        KernelSpec::RbfLengthscale { lengthscale, signal_var } => {
            out.push(*lengthscale);
            out.push(*signal_var);
        }
        KernelSpec::White { noise_var } => out.push(*noise_var),
        KernelSpec::Sum(a, b) => {
            collect_params(a, out);
            collect_params(b, out);
        }
        KernelSpec::Scaled { scale, inner } => {
            out.push(*scale);
            collect_params(inner, out);
        }
    }
}

fn assign_params(kernel: &mut KernelSpec, params: &[f64], cursor: &mut usize) {
    match kernel {
        KernelSpec::RbfGamma { gamma } => {
            *gamma = params[*cursor];
            *cursor += 1;
        }
        KernelSpec::RbfLengthscale { lengthscale, signal_var } => {
            *lengthscale = params[*cursor];
            *signal_var = params[*cursor + 1];
            *cursor += 2;
        }
        KernelSpec::White { noise_var } => {
            *noise_var = params[*cursor];
            *cursor += 1;
        }
        KernelSpec::Sum(a, b) => {
            assign_params(a, params, cursor);
            assign_params(b, params, cursor);
        }
        KernelSpec::Scaled { scale, inner } => {
            *scale = params[*cursor];
            *cursor += 1;
            assign_params(inner, params, cursor);
        }
    }
}

/// Per-parameter bounds used by the optimizer.
pub const PARAM_BOUNDS: (f64, f64) = (1e-5, 1e5);

fn with_params(template: &KernelSpec, params: &[f64]) -> KernelSpec {
    let mut k = template.clone();
    let mut cursor = 0;
    assign_params(&mut k, params, &mut cursor);
    k
}

/// Nelder-Mead in log-parameter space. Few dozen evaluations; each one is
/// a fresh factorization, which is acceptable at desk scale.
fn nelder_mead_lml(
    x: &DMatrix<f64>,
    ys: &DVector<f64>,
    template: &KernelSpec,
    alpha: f64,
    start: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let dim = start.len();
    let (lo, hi) = (PARAM_BOUNDS.0.ln(), PARAM_BOUNDS.1.ln());
    let clampv = |p: &mut Vec<f64>| {
        for v in p.iter_mut() {
            *v = v.clamp(lo, hi);
        }
    };
    let eval = |logp: &[f64]| -> f64 {
        let params: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
        let kernel = with_params(template, &params);
        match log_marginal_likelihood(x, ys, &kernel, alpha) {
            Ok(lml) if lml.is_finite() => -lml,
            _ => f64::INFINITY,
        }
    };
    let mut evals = 0;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let start_log: Vec<f64> = start.iter().map(|v| v.max(PARAM_BOUNDS.0).ln()).collect();
    simplex.push((start_log.clone(), eval(&start_log)));
    for d in 0..dim {
        let mut p = start_log.clone();
        p[d] += 0.5;
        clampv(&mut p);
        simplex.push((p.clone(), eval(&p)));
    }
    evals += dim + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..dim].iter().map(|(p, _)| p[d]).sum::<f64>() / dim as f64)
            .collect();
        let worst = simplex[dim].clone();
        let mut reflected: Vec<f64> =
            (0..dim).map(|d| centroid[d] + (centroid[d] - worst.0[d])).collect();
        clampv(&mut reflected);
        let fr = eval(&reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let mut expanded: Vec<f64> =
                (0..dim).map(|d| centroid[d] + 2.0 * (centroid[d] - worst.0[d])).collect();
            clampv(&mut expanded);
            let fe = eval(&expanded);
            evals += 1;
            simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
        } else {
            let mut contracted: Vec<f64> =
                (0..dim).map(|d| centroid[d] + 0.5 * (worst.0[d] - centroid[d])).collect();
            clampv(&mut contracted);
            let fc = eval(&contracted);
            evals += 1;
            if fc < worst.1 {
                simplex[dim] = (contracted, fc);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for d in 0..dim {
                        v.0[d] = best[d] + 0.5 * (v.0[d] - best[d]);
                    }
                    v.1 = eval(&v.0);
                }
                evals += dim;
            }
        }
        let spread = simplex.iter().map(|(_, f)| *f).fold(f64::NEG_INFINITY, f64::max)
            - simplex.iter().map(|(_, f)| *f).fold(f64::INFINITY, f64::min);
        if spread.abs() < 1e-9 {
            break;
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let best = simplex.remove(0);
    (best.0.iter().map(|v| v.exp()).collect(), -best.1)
}

/// Fit a GPR. With `restarts == 0` the given hyperparameters are used as
/// is: one factorization, no optimization. Otherwise the marginal
/// likelihood is maximized from the given start plus `restarts` random
/// log-uniform starts within the bounds.
pub fn fit_gpr(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: KernelSpec,
    alpha_reg: f64,
    restarts: u32,
    seed: u64,
) -> Result<GprState, ModelError> {
    kernel.validate()?;
    if x.nrows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if x.nrows() > GPR_MAX_ROWS {
        return Err(ModelError::InvalidParam(format!(
            "GPR is dense and capped at {GPR_MAX_ROWS} rows, got {}",
            x.nrows()
        )));
    }
    if y.len() != x.nrows() {
        return Err(ModelError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    let (ys, y_mean, y_sd) = standardize_targets(y);

    let kernel = if restarts == 0 {
        kernel
    } else {
        let mut start_params = Vec::new();
        collect_params(&kernel, &mut start_params);
        let dim = start_params.len();
        let mut best = nelder_mead_lml(x, &ys, &kernel, alpha_reg, &start_params, 60 + 20 * dim);
        let mut rng = derive_rng(seed, "gpr.restarts", 0);
        for _ in 0..restarts {
            let draw: Vec<f64> = (0..dim)
                .map(|_| {
                    let u: f64 = rng.random();
                    // Log-uniform inside a practical sub-box of the bounds.
                    (10f64).powf(-2.0 + 4.0 * u)
                })
                .collect();
            let cand = nelder_mead_lml(x, &ys, &kernel, alpha_reg, &draw, 60 + 20 * dim);
            if cand.1 > best.1 {
                best = cand;
            }
        }
        with_params(&kernel, &best.0)
    };

    let gram = kernel.gram(x);
    let (chol, jitter_used) = cholesky_with_jitter(&gram, alpha_reg)?;
    let alpha_vec = chol.solve(&ys);
    let log_det: f64 = (0..x.nrows()).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let n = x.nrows() as f64;
    let lml = -0.5 * ys.dot(&alpha_vec) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();

    Ok(GprState {
        x_train: x.clone(),
        kernel,
        alpha_reg,
        chol_lower: chol.l(),
        alpha_vec,
        y_mean,
        y_sd,
        restarts,
        log_marginal_likelihood: lml,
        jitter_used,
    })
}

impl GprState {
    /// Predictive mean and latent covariance in raw target units: the
    /// posterior over the noise-free function values.
    pub fn predict_full(&self, x: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>), ModelError> {
        check_dims(self.x_train.ncols(), x)?;
        let k_cross = self.kernel.cross(x, &self.x_train); // q × n
        let mean_std = &k_cross * &self.alpha_vec;
        let mean = mean_std.map(|v| v * self.y_sd + self.y_mean);

        // V = L⁻¹ Kᵀ, covariance = K** − VᵀV.
        let v = self
            .chol_lower
            .clone()
            .solve_lower_triangular(&k_cross.transpose())
            .ok_or(ModelError::NotPositiveDefinite)?;
        let q = x.nrows();
        let mut k_star = DMatrix::zeros(q, q);
        for i in 0..q {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            for j in i..q {
                let xj: Vec<f64> = x.row(j).iter().copied().collect();
                let val = self.kernel.eval_no_white(&xi, &xj);
                k_star[(i, j)] = val;
                k_star[(j, i)] = val;
            }
        }
        let mut cov = k_star - v.transpose() * v;
        // Symmetrize and clamp round-off on the diagonal.
        for i in 0..q {
            for j in (i + 1)..q {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
            if cov[(i, i)] < 0.0 {
                cov[(i, i)] = 0.0;
            }
        }
        let scale = self.y_sd * self.y_sd;
        Ok((mean, cov * scale))
    }

    /// Per-query latent predictive variance in raw target units.
    pub fn predict_variance(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        let (_, cov) = self.predict_full(x)?;
        Ok(DVector::from_iterator(cov.nrows(), (0..cov.nrows()).map(|i| cov[(i, i)])))
    }

    /// Variance of a new observation: latent variance plus the kernel's
    /// white component. Far from the data this reverts to signal plus
    /// noise.
    pub fn predict_observation_variance(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        let mut var = self.predict_variance(x)?;
        let scale = self.y_sd * self.y_sd;
        for i in 0..x.nrows() {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let white = self.kernel.diag(&xi) - self.kernel.eval_no_white(&xi, &xi);
            var[i] += white * scale;
        }
        Ok(var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rbf(l: f64) -> KernelSpec {
        KernelSpec::RbfLengthscale { lengthscale: l, signal_var: 1.0 }
    }

    fn ten_point_problem() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64 * 0.4);
        let y = DVector::from_fn(10, |i, _| (i as f64 * 0.4).sin() * 2.0 + 5.0);
        (x, y)
    }

    #[test]
    fn noise_free_gpr_interpolates_training_targets() {
        let (x, y) = ten_point_problem();
        let state = fit_gpr(&x, &y, rbf(1.0), 1e-12, 0, 0).unwrap();
        let pred = state.predict(&x).unwrap();
        for i in 0..10 {
            assert_abs_diff_eq!(pred[i], y[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn restarts_zero_keeps_given_hyperparameters() {
        let (x, y) = ten_point_problem();
        let state = fit_gpr(&x, &y, rbf(2.5), 1e-10, 0, 0).unwrap();
        assert_eq!(state.kernel, rbf(2.5));
        assert_eq!(state.restarts, 0);
    }

    #[test]
    fn predictions_match_direct_inverse_oracle() {
        let (x, y) = ten_point_problem();
        let kernel = KernelSpec::Sum(Box::new(rbf(0.9)), Box::new(KernelSpec::White { noise_var: 0.05 }));
        let state = fit_gpr(&x, &y, kernel.clone(), 1e-10, 0, 0).unwrap();

        // Oracle: explicit matrix inverse on the same standardized system.
        let n = 10;
        let ys = y.map(|v| (v - state.y_mean) / state.y_sd);
        let mut k = kernel.gram(&x);
        for i in 0..n {
            k[(i, i)] += state.alpha_reg;
        }
        let k_inv = k.try_inverse().unwrap();
        let queries = DMatrix::from_fn(5, 1, |i, _| 0.13 + i as f64 * 0.7);
        let k_cross = kernel.cross(&queries, &x);
        let mean_oracle = (&k_cross * &k_inv * ys) * state.y_sd;
        let mut k_star = DMatrix::zeros(5, 5);
        for i in 0..5 {
            let xi: Vec<f64> = queries.row(i).iter().copied().collect();
            for j in 0..5 {
                let xj: Vec<f64> = queries.row(j).iter().copied().collect();
                k_star[(i, j)] = kernel.eval_no_white(&xi, &xj);
            }
        }
        let cov_oracle = (k_star - &k_cross * k_inv * k_cross.transpose()) * state.y_sd * state.y_sd;

        let (mean, cov) = state.predict_full(&queries).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(mean[i], mean_oracle[i] + state.y_mean, epsilon = 1e-8);
            for j in 0..5 {
                assert_abs_diff_eq!(cov[(i, j)], cov_oracle[(i, j)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn variance_is_nonnegative_and_bounded_at_training_points() {
        let (x, y) = ten_point_problem();
        let noise = 0.04;
        let kernel = KernelSpec::Sum(Box::new(rbf(0.8)), Box::new(KernelSpec::White { noise_var: noise }));
        let state = fit_gpr(&x, &y, kernel, 1e-10, 0, 0).unwrap();
        let var = state.predict_variance(&x).unwrap();
        let std_units = state.y_sd * state.y_sd;
        for i in 0..10 {
            assert!(var[i] >= 0.0);
            assert!(var[i] / std_units <= noise + 1e-6, "train-point variance {}", var[i] / std_units);
        }
    }

    #[test]
    fn far_queries_revert_to_prior() {
        let (x, y) = ten_point_problem();
        let noise = 0.1;
        let kernel = KernelSpec::Sum(Box::new(rbf(0.5)), Box::new(KernelSpec::White { noise_var: noise }));
        let state = fit_gpr(&x, &y, kernel, 1e-10, 0, 0).unwrap();
        let far = DMatrix::from_row_slice(1, 1, &[500.0]);
        let (mean, _) = state.predict_full(&far).unwrap();
        assert_abs_diff_eq!(mean[0], state.y_mean, epsilon = 1e-6);
        let var = state.predict_observation_variance(&far).unwrap();
        let var_std = var[0] / (state.y_sd * state.y_sd);
        assert_abs_diff_eq!(var_std, 1.0 + noise, epsilon = 1e-6); // σ_f² + σ²
    }

    #[test]
    fn duplicate_rows_at_zero_noise_take_the_jitter_path() {
        let mut x = DMatrix::from_fn(6, 1, |i, _| (i / 2) as f64); // rows repeat
        x[(5, 0)] = 2.0;
        let y = DVector::from_fn(6, |i, _| (i / 2) as f64 * 1.5);
        let state = fit_gpr(&x, &y, rbf(1.0), 0.0, 0, 0).unwrap();
        assert!(state.jitter_used > 0.0);
        assert!(state.predict(&x).is_ok());
    }

    #[test]
    fn known_lengthscale_is_recovered_within_factor_two() {
        // Sample a function from the kernel's own prior at λ = 2, then let
        // the optimizer find λ back from the data.
        let true_l = 2.0;
        let n = 500;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 * 0.05);
        let kernel = rbf(true_l);
        let mut gram = kernel.gram(&x);
        for i in 0..n {
            gram[(i, i)] += 1e-8;
        }
        let chol = gram.cholesky().unwrap();
        let mut rng = crate::rng::derive_rng(42, "test.gpr.sample", 0);
        use rand_distr::Distribution;
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let z = DVector::from_fn(n, |_, _| normal.sample(&mut rng));
        let y = chol.l() * z;

        let start = KernelSpec::Sum(
            Box::new(KernelSpec::RbfLengthscale { lengthscale: 0.3, signal_var: 0.5 }),
            Box::new(KernelSpec::White { noise_var: 0.01 }),
        );
        let state = fit_gpr(&x, &y, start, 1e-8, 2, 7).unwrap();
        let mut params = Vec::new();
        collect_params(&state.kernel, &mut params);
        let fitted_l = params[0];
        assert!(
            fitted_l > true_l / 2.0 && fitted_l < true_l * 2.0,
            "lengthscale {fitted_l} vs true {true_l}"
        );
    }

    #[test]
    fn predictions_are_invariant_to_training_order() {
        let (x, y) = ten_point_problem();
        let kernel = KernelSpec::Sum(Box::new(rbf(0.9)), Box::new(KernelSpec::White { noise_var: 0.02 }));
        let a = fit_gpr(&x, &y, kernel.clone(), 1e-10, 0, 0).unwrap();
        let perm: Vec<usize> = (0..10).rev().collect();
        let xp = DMatrix::from_fn(10, 1, |i, _| x[(perm[i], 0)]);
        let yp = DVector::from_fn(10, |i, _| y[perm[i]]);
        let b = fit_gpr(&xp, &yp, kernel, 1e-10, 0, 0).unwrap();
        let q = DMatrix::from_fn(6, 1, |i, _| 0.21 * i as f64);
        let pa = a.predict(&q).unwrap();
        let pb = b.predict(&q).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(pa[i], pb[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn serialized_state_predicts_identically() {
        let (x, y) = ten_point_problem();
        let kernel = KernelSpec::Sum(Box::new(rbf(1.2)), Box::new(KernelSpec::White { noise_var: 0.01 }));
        let state = fit_gpr(&x, &y, kernel, 1e-10, 0, 0).unwrap();
        let json = serde_json::to_string(&state).unwrap();
        let back: GprState = serde_json::from_str(&json).unwrap();
        let q = DMatrix::from_fn(4, 1, |i, _| i as f64 * 0.35);
        let a = state.predict(&q).unwrap();
        let b = back.predict(&q).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn row_cap_is_enforced() {
        let x = DMatrix::zeros(GPR_MAX_ROWS + 1, 1);
        let y = DVector::zeros(GPR_MAX_ROWS + 1);
        assert!(fit_gpr(&x, &y, rbf(1.0), 1e-10, 0, 0).is_err());
    }
}
