//! Kernel functions for the SVR and GPR families.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Kernel specification. Composite kernels are built from sums and a
/// scalar product; bounds live on the hyperparameters they constrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    /// `exp(−γ‖x−x′‖²)`
    RbfGamma { gamma: f64 },
    /// `σ_f²·exp(−‖x−x′‖²/(2λ²))`
    RbfLengthscale { lengthscale: f64, signal_var: f64 },
    /// `σ²` on identical points, zero elsewhere.
    White { noise_var: f64 },
    Sum(Box<KernelSpec>, Box<KernelSpec>),
    /// `scale² · inner`
    Scaled { scale: f64, inner: Box<KernelSpec> },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            KernelSpec::RbfGamma { gamma } if *gamma <= 0.0 => {
                Err(ModelError::InvalidParam(format!("gamma must be positive, got {gamma}")))
            }
            KernelSpec::RbfLengthscale { lengthscale, signal_var } => {
                if *lengthscale <= 0.0 || *signal_var < 0.0 {
                    Err(ModelError::InvalidParam("lengthscale must be positive, signal_var nonnegative".into()))
                } else {
                    Ok(())
                }
            }
            KernelSpec::White { noise_var } if *noise_var < 0.0 => {
                Err(ModelError::InvalidParam("noise_var must be nonnegative".into()))
            }
            KernelSpec::Sum(a, b) => {
                a.validate()?;
                b.validate()
            }
            KernelSpec::Scaled { inner, .. } => inner.validate(),
            _ => Ok(()),
        }
    }

    /// Evaluate the kernel. Same-point detection for the white component
    /// is bitwise equality, which is what the Gram diagonal needs.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
        if x.len() != y.len() {
            return Err(ModelError::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::RbfGamma { gamma } => (-gamma * sq_dist(x, y)).exp(),
            KernelSpec::RbfLengthscale { lengthscale, signal_var } => {
                signal_var * (-sq_dist(x, y) / (2.0 * lengthscale * lengthscale)).exp()
            }
            KernelSpec::White { noise_var } => {
                if x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits()) {
                    *noise_var
                } else {
                    0.0
                }
            }
            KernelSpec::Sum(a, b) => a.eval_unchecked(x, y) + b.eval_unchecked(x, y),
            KernelSpec::Scaled { scale, inner } => scale * scale * inner.eval_unchecked(x, y),
        }
    }

    /// Gram matrix of the training rows against themselves. The white
    /// component contributes to the diagonal only.
    pub fn gram(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let n = rows.nrows();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            let xi: Vec<f64> = rows.row(i).iter().copied().collect();
            for j in i..n {
                let xj: Vec<f64> = rows.row(j).iter().copied().collect();
                let v = if i == j {
                    self.eval_unchecked(&xi, &xi)
                } else {
                    // Off-diagonal entries never get the white term, even
                    // for coincidentally equal rows elsewhere.
                    self.eval_no_white(&xi, &xj)
                };
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Cross matrix K(queries, training): white never contributes.
    pub fn cross(&self, queries: &DMatrix<f64>, train: &DMatrix<f64>) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(queries.nrows(), train.nrows());
        for i in 0..queries.nrows() {
            let xi: Vec<f64> = queries.row(i).iter().copied().collect();
            for j in 0..train.nrows() {
                let xj: Vec<f64> = train.row(j).iter().copied().collect();
                k[(i, j)] = self.eval_no_white(&xi, &xj);
            }
        }
        k
    }

    pub(crate) fn eval_no_white(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::White { .. } => 0.0,
            KernelSpec::Sum(a, b) => a.eval_no_white(x, y) + b.eval_no_white(x, y),
            KernelSpec::Scaled { scale, inner } => scale * scale * inner.eval_no_white(x, y),
            other => other.eval_unchecked(x, y),
        }
    }

    /// Diagonal value k(x, x) including the white term.
    pub fn diag(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x, x)
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}
