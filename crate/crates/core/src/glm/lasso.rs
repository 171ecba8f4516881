use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::RngCore;

use super::{weights_or_ones, FitError, LinearFit};
use crate::dataset::{select_rows, Family};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub n_lambda: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub min_ratio: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            n_lambda: 50,
            min_ratio: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LassoPenalty {
    Fixed(f64),
    CrossValidated(CvOptions),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LassoOptions {
    pub penalty: LassoPenalty,
    /// Penalize coefficients on the unit-variance scale.
    pub standardize: bool,
    /// Sweep convergence threshold relative to the weighted variance of y.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            penalty: LassoPenalty::CrossValidated(CvOptions::default()),
            standardize: true,
            tol: 1e-14,
            max_sweeps: 100_000,
        }
    }
}

impl LassoOptions {
    pub fn fixed(lambda: f64) -> Self {
        Self {
            penalty: LassoPenalty::Fixed(lambda),
            ..Self::default()
        }
    }
}

/// Weighted-centered (optionally unit-variance) working copy of a design.
///
/// Minimizes `(1/2n) sum_i w_i (y_i - b0 - x_i . beta)^2 + lambda |beta|_1`
/// with `n` the row count; the intercept is profiled out by centering.
pub(crate) struct LassoWork {
    n: usize,
    p: usize,
    /// Centered (and scaled) columns, column-major.
    cols: Vec<f64>,
    /// `w_i * cols_ij / n`, for the gradient inner products.
    wcols: Vec<f64>,
    #[cfg_attr(not(debug_assertions), allow(dead_code))]
    w: Vec<f64>,
    yc: Vec<f64>,
    mean_x: Vec<f64>,
    scale: Vec<f64>,
    mean_y: f64,
    curv: Vec<f64>,
    dropped: Vec<usize>,
    null_dev: f64,
}

impl LassoWork {
    pub(crate) fn new(x: &DMatrix<f64>, y: &[f64], w: &[f64], standardize: bool) -> Self {
        let n = x.nrows();
        let p = x.ncols();
        let sw: f64 = w.iter().sum();
        let nf = n as f64;
        let mean_y = if sw > 0.0 {
            w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sw
        } else {
            0.0
        };
        let yc: Vec<f64> = y.iter().map(|v| v - mean_y).collect();
        let null_dev = w.iter().zip(&yc).map(|(a, b)| a * b * b).sum::<f64>() / nf;

        let src = x.as_slice();
        let mut cols = vec![0.0; n * p];
        let mut wcols = vec![0.0; n * p];
        let mut mean_x = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let mut curv = vec![0.0; p];
        let mut dropped = Vec::new();
        for j in 0..p {
            let col = &src[j * n..(j + 1) * n];
            let m = if sw > 0.0 {
                w.iter().zip(col).map(|(a, b)| a * b).sum::<f64>() / sw
            } else {
                0.0
            };
            let var = if sw > 0.0 {
                w.iter().zip(col).map(|(a, b)| a * (b - m) * (b - m)).sum::<f64>() / sw
            } else {
                0.0
            };
            mean_x[j] = m;
            let tiny = 1e-24 * (1.0 + m * m);
            if !(var > tiny) {
                dropped.push(j);
                continue;
            }
            let s = if standardize { var.sqrt() } else { 1.0 };
            scale[j] = s;
            let out = &mut cols[j * n..(j + 1) * n];
            let wout = &mut wcols[j * n..(j + 1) * n];
            let mut a = 0.0;
            for i in 0..n {
                let v = (col[i] - m) / s;
                out[i] = v;
                wout[i] = w[i] * v / nf;
                a += wout[i] * v;
            }
            curv[j] = a;
        }
        Self {
            n,
            p,
            cols,
            wcols,
            w: w.to_vec(),
            yc,
            mean_x,
            scale,
            mean_y,
            curv,
            dropped,
            null_dev,
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    fn wcol(&self, j: usize) -> &[f64] {
        &self.wcols[j * self.n..(j + 1) * self.n]
    }

    fn is_dropped(&self, j: usize) -> bool {
        self.curv[j] == 0.0
    }

    /// Smallest penalty with an all-zero solution.
    pub(crate) fn lambda_max(&self) -> f64 {
        (0..self.p)
            .filter(|&j| !self.is_dropped(j))
            .map(|j| dot(self.wcol(j), &self.yc).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let mut r = self.yc.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                axpy(-b, self.col(j), &mut r);
            }
        }
        r
    }

    /// `(1/2n) sum_i w_i r_i^2 + lambda |beta|_1` on the working scale.
    #[cfg_attr(not(debug_assertions), allow(dead_code))]
    pub(crate) fn objective(&self, beta: &[f64], resid: &[f64], lambda: f64) -> f64 {
        let rss = self.w.iter().zip(resid).map(|(w, r)| w * r * r).sum::<f64>() / self.n as f64;
        rss / 2.0 + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// One coordinate update; returns `curv_j * delta^2`.
    #[inline]
    fn update(&self, j: usize, lambda: f64, beta: &mut [f64], resid: &mut [f64]) -> f64 {
        let a = self.curv[j];
        let old = beta[j];
        let z = dot(self.wcol(j), resid) + a * old;
        let new = soft_threshold(z, lambda) / a;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            axpy(-delta, self.col(j), resid);
        }
        a * delta * delta
    }

    /// Coordinate descent from the warm start in `beta` (working scale).
    /// Returns the number of sweeps used.
    pub(crate) fn solve(&self, lambda: f64, beta: &mut [f64], resid: &mut [f64], tol: f64, max_sweeps: usize) -> usize {
        let thresh = tol * self.null_dev.max(f64::MIN_POSITIVE);
        let mut sweeps = 0;
        loop {
            #[cfg(debug_assertions)]
            let before = self.objective(beta, resid, lambda);
            let mut max_change = 0.0f64;
            for j in 0..self.p {
                if !self.is_dropped(j) {
                    max_change = max_change.max(self.update(j, lambda, beta, resid));
                }
            }
            sweeps += 1;
            #[cfg(debug_assertions)]
            {
                let after = self.objective(beta, resid, lambda);
                debug_assert!(after <= before + 1e-10 * (1.0 + before.abs()), "lasso objective rose: {before} -> {after}");
            }
            if max_change <= thresh || sweeps >= max_sweeps {
                return sweeps;
            }
            let active: Vec<usize> = (0..self.p).filter(|&j| beta[j] != 0.0).collect();
            loop {
                let mut change = 0.0f64;
                for &j in &active {
                    change = change.max(self.update(j, lambda, beta, resid));
                }
                sweeps += 1;
                if change <= thresh || sweeps >= max_sweeps {
                    break;
                }
            }
            if sweeps >= max_sweeps {
                return sweeps;
            }
        }
    }

    /// Working-scale gradient of the smooth part, `(1/n) sum_i w_i x_ij r_i`.
    #[cfg(test)]
    pub(crate) fn gradient(&self, resid: &[f64]) -> Vec<f64> {
        (0..self.p).map(|j| dot(self.wcol(j), resid)).collect()
    }

    pub(crate) fn to_fit(&self, beta: &[f64], lambda: f64) -> LinearFit {
        let coef: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        let intercept = self.mean_y - coef.iter().zip(&self.mean_x).map(|(b, m)| b * m).sum::<f64>();
        LinearFit {
            intercept,
            coef,
            lambda,
            family: Family::Gaussian,
            dropped: self.dropped.clone(),
        }
    }

    /// Working-scale coefficients for an original-scale fit.
    pub(crate) fn to_working(&self, coef: &[f64]) -> Vec<f64> {
        coef.iter()
            .zip(&self.scale)
            .enumerate()
            .map(|(j, (c, s))| if self.is_dropped(j) { 0.0 } else { c * s })
            .collect()
    }
}

/// Penalty grid from `lambda_max` down to `min_ratio * lambda_max`, evenly
/// spaced on the log scale.
fn lambda_grid(lambda_max: f64, cv: &CvOptions) -> Vec<f64> {
    let k = cv.n_lambda.max(1);
    if k == 1 {
        return vec![lambda_max];
    }
    let step = cv.min_ratio.ln() / (k - 1) as f64;
    (0..k).map(|i| lambda_max * (step * i as f64).exp()).collect()
}

/// Smallest penalty for which every lasso coefficient is zero.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, standardize: bool) -> Result<f64, FitError> {
    let w = weights_or_ones(weights, x.nrows())?;
    if y.len() != x.nrows() {
        return Err(FitError::InvalidInput("y length does not match design".into()));
    }
    Ok(LassoWork::new(x, y, &w, standardize).lambda_max())
}

/// Fixed-penalty fit on a prepared design, warm-started from `warm`
/// (original-scale coefficients).
pub(crate) fn lasso_warm(work: &LassoWork, lambda: f64, warm: Option<&[f64]>, opts: &LassoOptions) -> LinearFit {
    let mut beta = match warm {
        Some(c) => work.to_working(c),
        None => vec![0.0; work.p],
    };
    let mut resid = work.residual(&beta);
    work.solve(lambda, &mut beta, &mut resid, opts.tol, opts.max_sweeps);
    work.to_fit(&beta, lambda)
}

/// Weighted lasso for a gaussian outcome.
///
/// With [`LassoPenalty::CrossValidated`] the penalty minimizing the weighted
/// held-out squared error over random folds is chosen (ties go to the larger
/// penalty) and the model is refit on all rows. `rng` is only used to assign
/// folds.
pub fn fit_lasso(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    opts: &LassoOptions,
    rng: &mut dyn RngCore,
) -> Result<LinearFit, FitError> {
    let n = x.nrows();
    if y.len() != n {
        return Err(FitError::InvalidInput("y length does not match design".into()));
    }
    if n < 2 {
        return Err(FitError::TooFewRows { got: n, need: 2 });
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(FitError::InvalidInput("non-finite input".into()));
    }
    let w = weights_or_ones(weights, n)?;
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(FitError::TooFewRows { got: 0, need: 2 });
    }
    let work = LassoWork::new(x, y, &w, opts.standardize);
    match opts.penalty {
        LassoPenalty::Fixed(lambda) => {
            if !(lambda >= 0.0) {
                return Err(FitError::InvalidInput("lambda must be nonnegative".into()));
            }
            Ok(lasso_warm(&work, lambda, None, opts))
        }
        LassoPenalty::CrossValidated(cv) => {
            if cv.folds < 2 || n < cv.folds {
                return Err(FitError::TooFewRows { got: n, need: cv.folds.max(2) });
            }
            if !(cv.min_ratio > 0.0 && cv.min_ratio < 1.0) {
                return Err(FitError::InvalidInput("min_ratio must lie in (0, 1)".into()));
            }
            let lmax = work.lambda_max();
            if lmax == 0.0 {
                return Ok(work.to_fit(&vec![0.0; work.p], 0.0));
            }
            let grid = lambda_grid(lmax, &cv);
            let best = cv_select(x, y, &w, &grid, &cv, opts, rng);
            let mut beta = vec![0.0; work.p];
            let mut resid = work.residual(&beta);
            for &lambda in &grid[..=best] {
                work.solve(lambda, &mut beta, &mut resid, opts.tol, opts.max_sweeps);
            }
            Ok(work.to_fit(&beta, grid[best]))
        }
    }
}

/// Index into `grid` with the smallest cross-validated error.
fn cv_select(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    grid: &[f64],
    cv: &CvOptions,
    opts: &LassoOptions,
    rng: &mut dyn RngCore,
) -> usize {
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % cv.folds;
    }
    let mut err = vec![0.0; grid.len()];
    for f in 0..cv.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xt = select_rows(x, &train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let wt: Vec<f64> = train.iter().map(|&i| w[i]).collect();
        let xh = select_rows(x, &held);
        let work = LassoWork::new(&xt, &yt, &wt, opts.standardize);
        let mut beta = vec![0.0; work.p];
        let mut resid = work.residual(&beta);
        for (k, &lambda) in grid.iter().enumerate() {
            work.solve(lambda, &mut beta, &mut resid, opts.tol, opts.max_sweeps);
            let pred = work.to_fit(&beta, lambda).linear_predictor(&xh);
            err[k] += held
                .iter()
                .zip(&pred)
                .map(|(&i, p)| w[i] * (y[i] - p) * (y[i] - p))
                .sum::<f64>();
        }
    }
    let mut best = 0;
    for k in 1..grid.len() {
        if err[k] < err[best] {
            best = k;
        }
    }
    best
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, j| rng.gen_range(-1.0..1.0) * (1.0 + j as f64));
        let y = (0..n)
            .map(|i| 1.0 + 2.0 * x[(i, 0)] - x[(i, 1)] + rng.gen_range(-0.5..0.5))
            .collect();
        (x, y)
    }

    /// Proximal gradient descent on the same objective, run to a tight
    /// tolerance. Independent of the coordinate-descent code path.
    fn proximal_oracle(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
        let n = x.nrows();
        let p = x.ncols();
        let nf = n as f64;
        let xi = super::super::with_intercept(x);
        let l = (xi.transpose() * &xi).symmetric_eigenvalues().max() / nf;
        let step = 1.0 / l;
        let mut theta = vec![0.0; p + 1];
        for _ in 0..200_000 {
            let mut r = vec![0.0; n];
            for i in 0..n {
                r[i] = y[i] - (0..=p).map(|j| xi[(i, j)] * theta[j]).sum::<f64>();
            }
            let mut next = theta.clone();
            let mut moved = 0.0f64;
            for j in 0..=p {
                let g = -(0..n).map(|i| xi[(i, j)] * r[i]).sum::<f64>() / nf;
                let z = theta[j] - step * g;
                next[j] = if j == 0 { z } else { soft_threshold(z, step * lambda) };
                moved = moved.max((next[j] - theta[j]).abs());
            }
            theta = next;
            if moved < 1e-14 {
                break;
            }
        }
        (theta[0], theta[1..].to_vec())
    }

    fn raw_objective(x: &DMatrix<f64>, y: &[f64], b0: f64, beta: &[f64], lambda: f64) -> f64 {
        let n = x.nrows();
        let rss: f64 = (0..n)
            .map(|i| {
                let r = y[i] - b0 - (0..beta.len()).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
                r * r
            })
            .sum();
        rss / (2.0 * n as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    #[test]
    fn matches_proximal_gradient_oracle() {
        let (x, y) = random_problem(3, 40, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = LassoOptions {
            standardize: false,
            ..LassoOptions::fixed(0.1)
        };
        let fit = fit_lasso(&x, &y, None, &opts, &mut rng).unwrap();
        let (b0, beta) = proximal_oracle(&x, &y, 0.1);
        let ours = raw_objective(&x, &y, fit.intercept, &fit.coef, 0.1);
        let oracle = raw_objective(&x, &y, b0, &beta, 0.1);
        assert!((ours - oracle).abs() <= 1e-6 * oracle.abs().max(1.0), "{ours} vs {oracle}");
        for j in 0..4 {
            assert!((fit.coef[j] - beta[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn lambda_max_zeroes_every_coefficient() {
        let (x, y) = random_problem(5, 30, 3);
        let lmax = lasso_lambda_max(&x, &y, None, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = fit_lasso(&x, &y, None, &LassoOptions::fixed(lmax), &mut rng).unwrap();
        assert!(fit.coef.iter().all(|&c| c == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((fit.intercept - mean).abs() < 1e-12);
        let below = fit_lasso(&x, &y, None, &LassoOptions::fixed(0.99 * lmax), &mut rng).unwrap();
        assert!(below.coef.iter().any(|&c| c != 0.0));
    }

    #[test]
    fn zero_penalty_interpolates_exact_line() {
        let x = DMatrix::from_vec(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let y: Vec<f64> = (0..5).map(|i| 3.0 - 2.0 * i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = fit_lasso(&x, &y, None, &LassoOptions::fixed(0.0), &mut rng).unwrap();
        assert!((fit.coef[0] + 2.0).abs() < 1e-6);
        assert!((fit.intercept - 3.0).abs() < 1e-6);
    }

    #[test]
    fn constant_column_is_dropped() {
        let (mut x, y) = random_problem(9, 25, 3);
        x.column_mut(1).fill(4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = fit_lasso(&x, &y, None, &LassoOptions::fixed(0.01), &mut rng).unwrap();
        assert_eq!(fit.dropped, vec![1]);
        assert_eq!(fit.coef[1], 0.0);
    }

    #[test]
    fn cross_validation_is_reproducible_and_recovers_signal() {
        let (x, y) = random_problem(21, 120, 6);
        let opts = LassoOptions::default();
        let a = fit_lasso(&x, &y, None, &opts, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = fit_lasso(&x, &y, None, &opts, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!((a.coef[0] - 2.0).abs() < 0.2);
        assert!((a.coef[1] + 1.0).abs() < 0.2);
    }

    #[test]
    fn zero_weights_ignore_rows() {
        let (x, y) = random_problem(2, 20, 2);
        let mut w = vec![1.0; 20];
        w[..5].iter_mut().for_each(|v| *v = 0.0);
        let keep: Vec<usize> = (5..20).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let opts = LassoOptions::fixed(0.05);
        let weighted = fit_lasso(&x, &y, Some(&w), &opts, &mut rng).unwrap();
        // The penalty is scaled by the full row count, so rescale lambda for
        // the subset fit.
        let sub = fit_lasso(
            &select_rows(&x, &keep),
            &keep.iter().map(|&i| y[i]).collect::<Vec<_>>(),
            None,
            &LassoOptions::fixed(0.05 * 20.0 / 15.0),
            &mut rng,
        )
        .unwrap();
        for j in 0..2 {
            assert!((weighted.coef[j] - sub.coef[j]).abs() < 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn kkt_conditions_hold(seed in 0u64..10_000, frac in 0.01f64..0.9) {
            let (x, y) = random_problem(seed, 30, 5);
            let w = vec![1.0; 30];
            let work = LassoWork::new(&x, &y, &w, true);
            let lambda = frac * work.lambda_max();
            let opts = LassoOptions::fixed(lambda);
            let fit = lasso_warm(&work, lambda, None, &opts);
            let beta = work.to_working(&fit.coef);
            let grad = work.gradient(&work.residual(&beta));
            for j in 0..5 {
                if beta[j] == 0.0 {
                    prop_assert!(grad[j].abs() <= lambda + 1e-6);
                } else {
                    prop_assert!((grad[j] - lambda * beta[j].signum()).abs() <= 1e-6);
                }
            }
        }
    }
}
