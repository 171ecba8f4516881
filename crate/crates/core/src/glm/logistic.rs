use nalgebra::{DMatrix, DVector};

use super::{log1pexp, sigmoid, weights_or_ones, with_intercept, FitError, LinearFit};
use crate::dataset::Family;

const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const GRAD_TOL: f64 = 1e-8;
const DECREMENT_TOL: f64 = 1e-13;
/// Without a penalty, a fitted logit this large means the MLE is at infinity.
const SEPARATION_LOGIT: f64 = 30.0;

/// Penalized negative log-likelihood
/// `-sum_i w_i [y_i eta_i - log(1 + e^eta_i)] + ridge/2 |theta|^2`, where
/// `theta = (intercept, coef)` and the intercept is penalized too.
pub fn logistic_objective(theta: &[f64], x: &DMatrix<f64>, y: &[f64], w: &[f64], ridge: f64) -> f64 {
    let eta = predictor(theta, x);
    let nll: f64 = eta
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * (log1pexp(e) - yi * e))
        .sum();
    nll + 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
}

/// Gradient of [`logistic_objective`] with respect to `theta`.
pub fn logistic_gradient(theta: &[f64], x: &DMatrix<f64>, y: &[f64], w: &[f64], ridge: f64) -> Vec<f64> {
    let eta = predictor(theta, x);
    let n = x.nrows();
    let resid: Vec<f64> = (0..n).map(|i| w[i] * (sigmoid(eta[i]) - y[i])).collect();
    let mut g = Vec::with_capacity(theta.len());
    g.push(resid.iter().sum::<f64>() + ridge * theta[0]);
    let data = x.as_slice();
    for j in 0..x.ncols() {
        let col = &data[j * n..(j + 1) * n];
        g.push(col.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() + ridge * theta[j + 1]);
    }
    g
}

fn predictor(theta: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut eta = vec![theta[0]; n];
    let data = x.as_slice();
    for (j, &b) in theta[1..].iter().enumerate() {
        if b != 0.0 {
            for (e, v) in eta.iter_mut().zip(&data[j * n..(j + 1) * n]) {
                *e += b * v;
            }
        }
    }
    eta
}

/// Damped Newton iterations from `warm` (or zero). Returns `theta`.
pub(crate) fn logistic_newton(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    ridge: f64,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>, FitError> {
    let d = x.ncols() + 1;
    let n = x.nrows();
    let xi = with_intercept(x);
    let mut theta = warm.map_or_else(|| vec![0.0; d], |t| t.to_vec());
    let mut obj = logistic_objective(&theta, x, y, w, ridge);
    for iter in 0..MAX_ITER {
        let grad = logistic_gradient(&theta, x, y, w, ridge);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let eta = predictor(&theta, x);
        if ridge == 0.0 && eta.iter().any(|e| e.abs() > SEPARATION_LOGIT) {
            return Err(FitError::Separation { iterations: iter });
        }
        if gmax <= GRAD_TOL {
            return Ok(theta);
        }
        let sq: Vec<f64> = (0..n)
            .map(|i| {
                let mu = sigmoid(eta[i]);
                (w[i] * mu * (1.0 - mu)).sqrt()
            })
            .collect();
        let xs = DMatrix::from_fn(n, d, |i, j| sq[i] * xi[(i, j)]);
        let mut hess = xs.tr_mul(&xs);
        for j in 0..d {
            hess[(j, j)] += ridge;
        }
        let step = match hess.cholesky() {
            Some(c) => c.solve(&DVector::from_vec(grad.clone())),
            None => return Err(FitError::Separation { iterations: iter }),
        };
        // Newton decrement below rounding of the objective: the line search
        // cannot see a decrease any more, so finish with the full step.
        let decrement: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();
        if decrement <= DECREMENT_TOL * (1.0 + obj.abs()) {
            return Ok(theta.iter().zip(step.iter()).map(|(a, s)| a - s).collect());
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let cobj = logistic_objective(&cand, x, y, w, ridge);
            if cobj <= obj {
                theta = cand;
                obj = cobj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent left at machine precision.
            if gmax <= 1e-5 * (1.0 + obj.abs()) {
                return Ok(theta);
            }
            return Err(FitError::NotConverged { iterations: iter, gradient: gmax });
        }
    }
    let grad = logistic_gradient(&theta, x, y, w, ridge);
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if gmax <= 1e-5 * (1.0 + obj.abs()) {
        Ok(theta)
    } else {
        Err(FitError::Separation { iterations: MAX_ITER })
    }
}

/// Ridge-penalized weighted logistic regression on the raw feature scale.
/// The intercept is penalized along with the slopes.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, ridge: f64) -> Result<LinearFit, FitError> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(FitError::TooFewRows { got: n, need: 1 });
    }
    if !(ridge >= 0.0) {
        return Err(FitError::InvalidInput("ridge must be nonnegative".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(FitError::InvalidInput("logistic outcome must be 0/1".into()));
    }
    let w = weights_or_ones(weights, n)?;
    let theta = logistic_newton(x, y, &w, ridge, None)?;
    Ok(LinearFit {
        intercept: theta[0],
        coef: theta[1..].to_vec(),
        lambda: ridge,
        family: Family::Bernoulli,
        dropped: Vec::new(),
    })
}
