//! Penalized regression fitters: lasso by coordinate descent, OLS / ridge by
//! normal equations, and ridge-penalized binary and multinomial logistic
//! regression.

mod lasso;
mod logistic;
mod multinomial;
mod ridge;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Family;

pub use lasso::{fit_lasso, lasso_lambda_max, CvOptions, LassoOptions, LassoPenalty};
pub(crate) use lasso::{lasso_warm, LassoWork};
pub use logistic::{fit_logistic, logistic_gradient, logistic_objective};
pub(crate) use logistic::logistic_newton;
pub use multinomial::{fit_multinomial, multinomial_gradient, multinomial_objective, softmax, MultinomialFit};
pub use ridge::{fit_ols_ridge, solve_centered_ridge};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("TooFewRows: {got} rows, need at least {need}")]
    TooFewRows { got: usize, need: usize },
    #[error("SingularDesign")]
    SingularDesign,
    #[error("Separation: no convergence after {iterations} iterations (retry with ridge > 0)")]
    Separation { iterations: usize },
    #[error("NotConverged: gradient {gradient:e} after {iterations} iterations")]
    NotConverged { iterations: usize, gradient: f64 },
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
}

/// A fitted linear predictor `intercept + x . coef` on the original feature
/// scale. For the bernoulli family the predictor is on the logit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub family: Family,
    /// Zero-variance columns that were dropped (coefficient pinned to 0).
    #[serde(default)]
    pub dropped: Vec<usize>,
}

impl LinearFit {
    pub fn zeros(p: usize, family: Family) -> Self {
        Self {
            intercept: 0.0,
            coef: vec![0.0; p],
            lambda: 0.0,
            family,
            dropped: Vec::new(),
        }
    }

    /// Linear predictor for every row of `x`.
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(x.ncols(), self.coef.len(), "design width");
        let n = x.nrows();
        let mut eta = vec![self.intercept; n];
        let data = x.as_slice();
        for (j, &b) in self.coef.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let col = &data[j * n..(j + 1) * n];
            for (e, &v) in eta.iter_mut().zip(col) {
                *e += b * v;
            }
        }
        eta
    }

    /// Conditional mean: the linear predictor (gaussian) or its logistic
    /// transform (bernoulli).
    pub fn predict_mean(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut eta = self.linear_predictor(x);
        if self.family == Family::Bernoulli {
            eta.iter_mut().for_each(|e| *e = sigmoid(*e));
        }
        eta
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub(crate) fn log1pexp(t: f64) -> f64 {
    if t > 35.0 {
        t
    } else if t < -35.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

pub(crate) fn weights_or_ones(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>, FitError> {
    match weights {
        None => Ok(vec![1.0; n]),
        Some(w) => {
            if w.len() != n {
                return Err(FitError::InvalidInput(format!("{} weights for {n} rows", w.len())));
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(FitError::InvalidInput("weights must be finite and nonnegative".into()));
            }
            Ok(w.to_vec())
        }
    }
}

/// Design matrix with a leading column of ones.
pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut data = Vec::with_capacity(n * (x.ncols() + 1));
    data.extend(std::iter::repeat(1.0).take(n));
    data.extend_from_slice(x.as_slice());
    DMatrix::from_vec(n, x.ncols() + 1, data)
}

/// Serializes a dense matrix as a list of rows.
pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}
