//! Shapley attribution for regression models.
//!
//! A feature's value is its average marginal contribution across feature
//! coalitions; absent features are marginalized by replacing them with
//! background rows (the interventional expectation). Exact enumeration
//! covers up to twelve features; beyond that a sampling estimator solves
//! a weighted least squares over random coalitions with the efficiency
//! constraint enforced exactly, reporting per-feature standard errors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ModelError;
use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{got} features exceed the exact-enumeration cap of {cap}")]
    TooManyFeatures { cap: usize, got: usize },
    #[error("need at least {need} coalition samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("explained point has {got} features, background has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Upper bound on exact enumeration: 2^12 coalitions.
pub const EXACT_MAX_FEATURES: usize = 12;

/// Attribution of one prediction to its features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Expected model output over the background set.
    pub base_value: f64,
    pub shap_values: Vec<f64>,
    /// The explained point itself.
    pub feature_values: Vec<f64>,
    /// Standard errors per feature, sampling mode only.
    pub standard_errors: Option<Vec<f64>>,
}

impl Attribution {
    /// `base + Σφ`, which local accuracy ties to the model prediction.
    pub fn reconstructed_prediction(&self) -> f64 {
        self.base_value + self.shap_values.iter().sum::<f64>()
    }
}

/// Anything that can predict a batch of rows.
pub trait PredictFn {
    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError>;
}

impl<F> PredictFn for F
where
    F: Fn(&DMatrix<f64>) -> Result<DVector<f64>, ModelError>,
{
    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        self(x)
    }
}

/// Mean model output when the coalition `mask` takes the explained point's
/// values and everything else comes from the background rows.
fn coalition_value(
    model: &dyn PredictFn,
    background: &DMatrix<f64>,
    x: &[f64],
    mask: u64,
) -> Result<f64, ExplainError> {
    let b = background.nrows();
    let p = x.len();
    let mut rows = background.clone();
    for j in 0..p {
        if mask & (1 << j) != 0 {
            for i in 0..b {
                rows[(i, j)] = x[j];
            }
        }
    }
    let pred = model.predict(&rows)?;
    Ok(pred.iter().sum::<f64>() / b as f64)
}

/// Exact Shapley values by full coalition enumeration.
pub fn shap_exact(
    model: &dyn PredictFn,
    background: &DMatrix<f64>,
    x: &[f64],
    max_features: usize,
) -> Result<Attribution, ExplainError> {
    let p = x.len();
    let cap = max_features.min(EXACT_MAX_FEATURES);
    if p > cap {
        return Err(ExplainError::TooManyFeatures { cap, got: p });
    }
    if background.nrows() == 0 {
        return Err(ExplainError::EmptyBackground);
    }
    if background.ncols() != p {
        return Err(ExplainError::DimensionMismatch { expected: background.ncols(), got: p });
    }

    let n_masks = 1usize << p;
    let mut values = vec![0.0; n_masks];
    for (mask, slot) in values.iter_mut().enumerate() {
        *slot = coalition_value(model, background, x, mask as u64)?;
    }

    // Shapley weight per coalition size: |S|!·(p−|S|−1)!/p!.
    let mut factorial = vec![1.0f64; p + 1];
    for i in 1..=p {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let weight = |s: usize| factorial[s] * factorial[p - s - 1] / factorial[p];

    let mut shap_values = vec![0.0; p];
    for (k, phi) in shap_values.iter_mut().enumerate() {
        let bit = 1usize << k;
        for mask in 0..n_masks {
            if mask & bit != 0 {
                continue;
            }
            let s = (mask as u64).count_ones() as usize;
            *phi += weight(s) * (values[mask | bit] - values[mask]);
        }
    }

    Ok(Attribution {
        base_value: values[0],
        shap_values,
        feature_values: x.to_vec(),
        standard_errors: None,
    })
}

/// Kernel-weighted sampling estimator. Coalition sizes are drawn with the
/// Shapley kernel's size distribution, the regression is solved with the
/// efficiency constraint eliminated exactly, and per-feature standard
/// errors come from the regression covariance.
pub fn shap_sampled(
    model: &dyn PredictFn,
    background: &DMatrix<f64>,
    x: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Attribution, ExplainError> {
    let p = x.len();
    if background.nrows() == 0 {
        return Err(ExplainError::EmptyBackground);
    }
    if background.ncols() != p {
        return Err(ExplainError::DimensionMismatch { expected: background.ncols(), got: p });
    }
    let need = 2 * (p + 1);
    if n_samples < need {
        return Err(ExplainError::InsufficientSamples { need, got: n_samples });
    }
    let base = coalition_value(model, background, x, 0)?;
    let full = coalition_value(model, background, x, (1u64 << p) - 1)?;
    if p == 1 {
        return Ok(Attribution {
            base_value: base,
            shap_values: vec![full - base],
            feature_values: x.to_vec(),
            standard_errors: Some(vec![0.0]),
        });
    }

    // Size distribution of the Shapley kernel over subsets: ∝ 1/(s(p−s)).
    let size_weights: Vec<f64> = (1..p).map(|s| 1.0 / (s as f64 * (p - s) as f64)).collect();
    let total_w: f64 = size_weights.iter().sum();
    let mut rng = derive_rng(seed, "shap.sample", 0);
    let mut masks = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut draw = rng.random::<f64>() * total_w;
        let mut size = 1;
        for (s, w) in size_weights.iter().enumerate() {
            if draw < *w {
                size = s + 1;
                break;
            }
            draw -= w;
        }
        // Uniform subset of that size.
        let mut chosen: Vec<usize> = (0..p).collect();
        for i in 0..size {
            let j = rng.random_range(i..p);
            chosen.swap(i, j);
        }
        let mut mask = 0u64;
        for &j in chosen.iter().take(size) {
            mask |= 1 << j;
        }
        masks.push(mask);
    }

    // Constrained regression with φ_last eliminated by efficiency:
    // target t = v(z) − base − z_last·(full − base),
    // design a_j = z_j − z_last for j < p−1.
    let last = p - 1;
    let span = full - base;
    let mut design = DMatrix::zeros(n_samples, p - 1);
    let mut target = DVector::zeros(n_samples);
    for (i, mask) in masks.iter().enumerate() {
        let v = coalition_value(model, background, x, *mask)?;
        let z_last = ((mask >> last) & 1) as f64;
        target[i] = v - base - z_last * span;
        for j in 0..p - 1 {
            design[(i, j)] = ((mask >> j) & 1) as f64 - z_last;
        }
    }
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * &target;
    let gram_inv = gram.clone().try_inverse().ok_or(ExplainError::InsufficientSamples {
        need: 2 * (p + 1),
        got: n_samples,
    })?;
    let beta = &gram_inv * rhs;

    let mut shap_values: Vec<f64> = beta.iter().copied().collect();
    let assigned: f64 = shap_values.iter().sum();
    shap_values.push(span - assigned);

    // Residual variance drives the standard errors; the eliminated
    // feature's error is the variance of 1ᵀβ.
    let residual = &target - &design * &beta;
    let dof = (n_samples - (p - 1)).max(1) as f64;
    let sigma2 = residual.norm_squared() / dof;
    let cov = gram_inv * sigma2;
    let mut errors: Vec<f64> = (0..p - 1).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let ones = DVector::from_element(p - 1, 1.0);
    errors.push((ones.dot(&(&cov * &ones))).max(0.0).sqrt());

    Ok(Attribution {
        base_value: base,
        shap_values,
        feature_values: x.to_vec(),
        standard_errors: Some(errors),
    })
}

// ---------------------------------------------------------------------------
// Global summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImpact {
    pub feature: String,
    pub mean_abs_shap: f64,
    /// Pearson correlation between feature value and its attribution;
    /// positive means larger values push the prediction up.
    pub sign_correlation: f64,
}

/// One beeswarm point: the feature's value and attribution at one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmPoint {
    pub feature: String,
    pub value: f64,
    pub phi: f64,
    pub point_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAttributionSummary {
    /// Ranked by mean |SHAP|, descending.
    pub impacts: Vec<FeatureImpact>,
    pub points: Vec<BeeswarmPoint>,
}

impl GlobalAttributionSummary {
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.impacts.iter().position(|f| f.feature == feature)
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Explain every row of `points` and aggregate: mean |SHAP| ranking plus
/// the raw (value, φ) pairs for beeswarm-style plots. Uses exact
/// enumeration when the feature count allows it, sampling otherwise.
pub fn global_summary(
    model: &dyn PredictFn,
    points: &DMatrix<f64>,
    background: &DMatrix<f64>,
    feature_names: &[String],
    n_samples: usize,
    seed: u64,
) -> Result<GlobalAttributionSummary, ExplainError> {
    let p = points.ncols();
    let mut abs_sums = vec![0.0; p];
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(points.nrows()); p];
    let mut phis: Vec<Vec<f64>> = vec![Vec::with_capacity(points.nrows()); p];
    let mut out_points = Vec::with_capacity(points.nrows() * p);
    for i in 0..points.nrows() {
        let x: Vec<f64> = points.row(i).iter().copied().collect();
        let attribution = if p <= EXACT_MAX_FEATURES {
            shap_exact(model, background, &x, EXACT_MAX_FEATURES)?
        } else {
            shap_sampled(
                model,
                background,
                &x,
                n_samples,
                crate::rng::derive_seed(seed, "shap.row", i as u64),
            )?
        };
        for j in 0..p {
            abs_sums[j] += attribution.shap_values[j].abs();
            values[j].push(x[j]);
            phis[j].push(attribution.shap_values[j]);
            out_points.push(BeeswarmPoint {
                feature: feature_names[j].clone(),
                value: x[j],
                phi: attribution.shap_values[j],
                point_id: i,
            });
        }
    }
    let n = points.nrows().max(1) as f64;
    let mut impacts: Vec<FeatureImpact> = (0..p)
        .map(|j| FeatureImpact {
            feature: feature_names[j].clone(),
            mean_abs_shap: abs_sums[j] / n,
            sign_correlation: pearson(&values[j], &phis[j]),
        })
        .collect();
    impacts.sort_by(|a, b| b.mean_abs_shap.partial_cmp(&a.mean_abs_shap).unwrap());
    Ok(GlobalAttributionSummary { impacts, points: out_points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn linear_model(weights: Vec<f64>, intercept: f64) -> impl PredictFn {
        move |x: &DMatrix<f64>| {
            let w = DVector::from_column_slice(&weights);
            let mut out = x * w;
            out.add_scalar_mut(intercept);
            Ok(out)
        }
    }

    fn random_background(p: usize, rows: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::derive_rng(seed, "test.shap.bg", 0);
        DMatrix::from_fn(rows, p, |_, _| rng.random::<f64>() * 4.0 - 2.0)
    }

    #[test]
    fn linear_model_matches_analytic_attribution() {
        let weights = vec![2.0, -1.5, 0.7, 0.0, 3.1];
        let model = linear_model(weights.clone(), 4.0);
        let background = random_background(5, 40, 1);
        let x = [0.8, -0.4, 1.2, 0.5, -1.0];
        let attribution = shap_exact(&model, &background, &x, 12).unwrap();
        for j in 0..5 {
            let bg_mean = background.column(j).iter().sum::<f64>() / 40.0;
            let expected = weights[j] * (x[j] - bg_mean);
            assert_abs_diff_eq!(attribution.shap_values[j], expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn ignored_feature_gets_exactly_zero() {
        let model = linear_model(vec![1.0, 0.0, 2.0], 0.0);
        let background = random_background(3, 25, 2);
        let attribution = shap_exact(&model, &background, &[1.0, 99.0, -2.0], 12).unwrap();
        assert_eq!(attribution.shap_values[1], 0.0);
    }

    #[test]
    fn symmetric_features_with_equal_values_share_credit() {
        // f depends on x0 and x1 symmetrically; the background treats them
        // identically too.
        let model = |x: &DMatrix<f64>| {
            Ok(DVector::from_fn(x.nrows(), |i, _| (x[(i, 0)] + x[(i, 1)]).powi(2) + x[(i, 2)]))
        };
        let mut rng = crate::rng::derive_rng(3, "test.shap.sym", 0);
        let background = DMatrix::from_fn(30, 3, |i, j| {
            if j < 2 {
                // Same column content for the two symmetric features.
                ((i * 31) % 17) as f64 * 0.1 - 0.8
            } else {
                rng.random::<f64>()
            }
        });
        let attribution = shap_exact(&model, &background, &[0.6, 0.6, 0.2], 12).unwrap();
        assert_abs_diff_eq!(attribution.shap_values[0], attribution.shap_values[1], epsilon = 1e-10);
    }

    #[test]
    fn local_accuracy_holds_exactly() {
        let model = |x: &DMatrix<f64>| {
            Ok(DVector::from_fn(x.nrows(), |i, _| {
                (x[(i, 0)] * 1.7).sin() + x[(i, 1)] * x[(i, 2)] - 0.3 * x[(i, 3)]
            }))
        };
        let background = random_background(4, 50, 4);
        for case in 0..5 {
            let mut rng = crate::rng::derive_rng(5, "test.shap.point", case);
            let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let attribution = shap_exact(&model, &background, &x, 12).unwrap();
            let point = DMatrix::from_fn(1, 4, |_, j| x[j]);
            let prediction = model(&point).unwrap()[0];
            assert_abs_diff_eq!(attribution.reconstructed_prediction(), prediction, epsilon = 1e-8);
        }
    }

    #[test]
    fn dummy_feature_leaves_other_attributions_unchanged() {
        let model3 = linear_model(vec![2.0, -1.0, 0.5], 1.0);
        let background3 = random_background(3, 30, 6);
        let x3 = [0.4, -0.9, 1.1];
        let base = shap_exact(&model3, &background3, &x3, 12).unwrap();

        // Same model with a constant fourth input it ignores.
        let model4 = linear_model(vec![2.0, -1.0, 0.5, 0.0], 1.0);
        let mut background4 = DMatrix::zeros(30, 4);
        background4.view_mut((0, 0), (30, 3)).copy_from(&background3);
        for i in 0..30 {
            background4[(i, 3)] = 7.7;
        }
        let x4 = [0.4, -0.9, 1.1, 7.7];
        let with_dummy = shap_exact(&model4, &background4, &x4, 12).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(with_dummy.shap_values[j], base.shap_values[j], epsilon = 1e-8);
        }
        assert_abs_diff_eq!(with_dummy.shap_values[3], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn attributions_add_across_models() {
        let f = linear_model(vec![1.0, 2.0, -0.5], 0.3);
        let g = |x: &DMatrix<f64>| {
            Ok(DVector::from_fn(x.nrows(), |i, _| (x[(i, 1)] * 2.0).cos() * x[(i, 0)]))
        };
        let sum_model = |x: &DMatrix<f64>| {
            let a = f.predict(x)?;
            let b = g(x)?;
            Ok(a + b)
        };
        let background = random_background(3, 20, 7);
        let x = [0.5, -0.2, 0.9];
        let pf = shap_exact(&f, &background, &x, 12).unwrap();
        let pg = shap_exact(&g, &background, &x, 12).unwrap();
        let ps = shap_exact(&sum_model, &background, &x, 12).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(
                ps.shap_values[j],
                pf.shap_values[j] + pg.shap_values[j],
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn sampled_matches_exact_within_three_standard_errors() {
        let model = |x: &DMatrix<f64>| {
            Ok(DVector::from_fn(x.nrows(), |i, _| {
                2.0 * x[(i, 0)] - x[(i, 1)] + (x[(i, 2)] * 1.3).sin() + x[(i, 3)] * x[(i, 4)]
                    + 0.2 * x[(i, 5)]
                    - 0.7 * x[(i, 6)]
                    + 0.05 * x[(i, 7)].powi(2)
                    + x[(i, 8)]
            }))
        };
        let background = random_background(9, 30, 8);
        let x = [0.7, -0.3, 1.1, 0.4, -0.8, 0.2, 0.9, -1.2, 0.5];
        let exact = shap_exact(&model, &background, &x, 12).unwrap();
        let sampled = shap_sampled(&model, &background, &x, 4000, 11).unwrap();
        let errors = sampled.standard_errors.as_ref().unwrap();
        for j in 0..9 {
            let gap = (sampled.shap_values[j] - exact.shap_values[j]).abs();
            let band = 3.0 * errors[j] + 1e-9;
            assert!(gap <= band, "feature {j}: gap {gap} > 3·SE {band}");
        }
    }

    #[test]
    fn sampled_efficiency_is_exact_by_construction() {
        let model = linear_model(vec![1.0, -2.0, 0.5, 0.3], 2.0);
        let background = random_background(4, 25, 9);
        let x = [0.1, 0.7, -0.4, 1.3];
        let sampled = shap_sampled(&model, &background, &x, 64, 5).unwrap();
        let point = DMatrix::from_fn(1, 4, |_, j| x[j]);
        let prediction = model.predict(&point).unwrap()[0];
        assert_abs_diff_eq!(sampled.reconstructed_prediction(), prediction, epsilon = 1e-9);
    }

    #[test]
    fn zero_variance_model_attributes_nothing() {
        let model = |x: &DMatrix<f64>| Ok(DVector::from_element(x.nrows(), 42.0));
        let background = random_background(5, 20, 10);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let sampled = shap_sampled(&model, &background, &x, 48, 3).unwrap();
        for phi in &sampled.shap_values {
            assert_abs_diff_eq!(*phi, 0.0, epsilon = 1e-10);
        }
        let exact = shap_exact(&model, &background, &x, 12).unwrap();
        for phi in &exact.shap_values {
            assert_eq!(*phi, 0.0);
        }
    }

    #[test]
    fn too_many_features_and_too_few_samples_error() {
        let model = linear_model(vec![0.0; 13], 0.0);
        let background = random_background(13, 5, 12);
        let x = [0.0; 13];
        assert!(matches!(
            shap_exact(&model, &background, &x, 12),
            Err(ExplainError::TooManyFeatures { .. })
        ));
        let model = linear_model(vec![0.0; 4], 0.0);
        let background = random_background(4, 5, 13);
        assert!(matches!(
            shap_sampled(&model, &background, &[0.0; 4], 5, 0),
            Err(ExplainError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn global_summary_ranks_the_dominant_feature_first() {
        let model = linear_model(vec![5.0, 0.5, -0.1], 0.0);
        let background = random_background(3, 30, 14);
        let points = random_background(3, 25, 15);
        let names: Vec<String> = ["big", "small", "tiny"].iter().map(|s| s.to_string()).collect();
        let summary = global_summary(&model, &points, &background, &names, 0, 0).unwrap();
        assert_eq!(summary.impacts[0].feature, "big");
        assert!(summary.impacts[0].sign_correlation > 0.99);
        assert_eq!(summary.rank_of("tiny"), Some(2));
        assert_eq!(summary.points.len(), 25 * 3);
    }

    #[test]
    fn single_ignoring_model_concentrates_all_mass() {
        let model = linear_model(vec![0.0, 3.0, 0.0], 1.0);
        let background = random_background(3, 20, 16);
        let points = random_background(3, 10, 17);
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let summary = global_summary(&model, &points, &background, &names, 0, 0).unwrap();
        assert_eq!(summary.impacts[0].feature, "b");
        let total: f64 = summary.impacts.iter().map(|f| f.mean_abs_shap).sum();
        assert_abs_diff_eq!(summary.impacts[0].mean_abs_shap, total, epsilon = 1e-12);
    }
}
