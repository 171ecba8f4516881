use nalgebra::{DMatrix, DVector};

use super::{weights_or_ones, FitError, LinearFit};
use crate::dataset::Family;

/// Pivots smaller than this fraction of the matching diagonal entry mark a
/// numerically rank-deficient Gram matrix.
const PIVOT_TOL: f64 = 1e-12;

/// Solves `(cov + ridge I) beta = cross` for centered sufficient statistics
/// and recovers the intercept from the means. `cov` is the centered weighted
/// Gram matrix, `cross` the centered weighted cross-product with y.
///
/// Returns `(intercept, beta)`.
pub fn solve_centered_ridge(
    mean_x: &[f64],
    mean_y: f64,
    cov: &DMatrix<f64>,
    cross: &[f64],
    ridge: f64,
) -> Result<(f64, Vec<f64>), FitError> {
    let d = mean_x.len();
    if d == 0 {
        return Ok((mean_y, Vec::new()));
    }
    let mut a = cov.clone();
    for j in 0..d {
        a[(j, j)] += ridge;
    }
    let diag: Vec<f64> = (0..d).map(|j| a[(j, j)]).collect();
    let chol = a.cholesky().ok_or(FitError::SingularDesign)?;
    if ridge == 0.0 {
        let l = chol.l_dirty();
        for j in 0..d {
            let piv = l[(j, j)] * l[(j, j)];
            if !(piv > PIVOT_TOL * diag[j].max(f64::MIN_POSITIVE)) {
                return Err(FitError::SingularDesign);
            }
        }
    }
    let beta = chol.solve(&DVector::from_column_slice(cross));
    let intercept = mean_y - mean_x.iter().zip(beta.iter()).map(|(m, b)| m * b).sum::<f64>();
    Ok((intercept, beta.iter().copied().collect()))
}

/// Minimizes `sum_i w_i (y_i - b0 - x_i . beta)^2 + ridge * |beta|^2` with an
/// unpenalized intercept, on the raw feature scale.
pub fn fit_ols_ridge(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, ridge: f64) -> Result<LinearFit, FitError> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(FitError::TooFewRows { got: n, need: 1 });
    }
    if !(ridge >= 0.0) {
        return Err(FitError::InvalidInput("ridge must be nonnegative".into()));
    }
    let w = weights_or_ones(weights, n)?;
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(FitError::TooFewRows { got: 0, need: 1 });
    }
    let p = x.ncols();
    let data = x.as_slice();
    let mean_y = w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mean_x: Vec<f64> = (0..p)
        .map(|j| w.iter().zip(&data[j * n..(j + 1) * n]).map(|(a, b)| a * b).sum::<f64>() / sw)
        .collect();
    // Weighted, centered copies: column j holds sqrt(w_i) (x_ij - mean_j).
    let sqw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let xc = DMatrix::from_fn(n, p, |i, j| sqw[i] * (x[(i, j)] - mean_x[j]));
    let yc = DVector::from_fn(n, |i, _| sqw[i] * (y[i] - mean_y));
    let cov = xc.tr_mul(&xc);
    let cross = xc.tr_mul(&yc);
    let (intercept, coef) = solve_centered_ridge(&mean_x, mean_y, &cov, cross.as_slice(), ridge)?;
    Ok(LinearFit {
        intercept,
        coef,
        lambda: ridge,
        family: Family::Gaussian,
        dropped: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn exact_line() {
        let x = DMatrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let fit = fit_ols_ridge(&x, &[1.0, 2.0, 3.0, 4.0], None, 0.0).unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
    }

    #[test]
    fn constant_outcome() {
        let x = DMatrix::from_vec(4, 2, vec![1.0, 2.0, 0.0, 4.0, 3.0, -1.0, 2.0, 5.0]);
        let fit = fit_ols_ridge(&x, &[2.5; 4], None, 0.0).unwrap();
        assert!((fit.intercept - 2.5).abs() < 1e-12);
        assert!(fit.coef.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn matches_closed_form_on_centered_design() {
        // Oracle: (X'X + 0.5 I)^{-1} X'y solved independently. Columns and y
        // are centered so the unpenalized intercept is exactly zero.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut x = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-2.0..2.0));
        let mut y: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for j in 0..2 {
            let m = x.column(j).mean();
            x.column_mut(j).add_scalar_mut(-m);
        }
        let ym = y.iter().sum::<f64>() / 6.0;
        y.iter_mut().for_each(|v| *v -= ym);

        let g = x.transpose() * &x + DMatrix::identity(2, 2) * 0.5;
        let rhs = x.transpose() * DVector::from_vec(y.clone());
        let oracle = g.lu().solve(&rhs).unwrap();

        let fit = fit_ols_ridge(&x, &y, None, 0.5).unwrap();
        assert!(fit.intercept.abs() < 1e-12);
        for j in 0..2 {
            assert!((fit.coef[j] - oracle[j]).abs() < 1e-12, "{} vs {}", fit.coef[j], oracle[j]);
        }
    }

    #[test]
    fn rank_deficient_without_ridge_is_singular() {
        let col = [1.0, 2.0, 3.0, 5.0];
        let x = DMatrix::from_fn(4, 2, |i, _| col[i]);
        assert_eq!(fit_ols_ridge(&x, &[1.0, 0.0, 2.0, 1.0], None, 0.0), Err(FitError::SingularDesign));
        assert!(fit_ols_ridge(&x, &[1.0, 0.0, 2.0, 1.0], None, 0.1).is_ok());
    }

    #[test]
    fn weights_act_like_row_replication() {
        let x = DMatrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]);
        let y = [0.0, 2.0, 1.0];
        let weighted = fit_ols_ridge(&x, &y, Some(&[1.0, 2.0, 1.0]), 0.3).unwrap();
        let xr = DMatrix::from_vec(4, 1, vec![0.0, 1.0, 1.0, 2.0]);
        let replicated = fit_ols_ridge(&xr, &[0.0, 2.0, 2.0, 1.0], None, 0.3).unwrap();
        assert!((weighted.coef[0] - replicated.coef[0]).abs() < 1e-12);
        assert!((weighted.intercept - replicated.intercept).abs() < 1e-12);
    }
}
