use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{with_intercept, FitError};

const MAX_NEWTON_ITER: usize = 100;
const MAX_LBFGS_ITER: usize = 20_000;
const MAX_HALVINGS: usize = 30;
const GRAD_TOL: f64 = 1e-8;
/// Largest free-parameter count solved by full Newton steps; larger problems
/// switch to L-BFGS.
const NEWTON_MAX_PARAMS: usize = 300;
const LBFGS_MEMORY: usize = 10;

/// Ridge-penalized multinomial logit. Row `t` of `weights` holds the
/// intercept and slopes for label `t + 1`; row 0 (label 1) is the reference
/// and stays zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultinomialFit {
    #[serde(with = "super::matrix_rows")]
    pub weights: DMatrix<f64>,
    pub ridge: f64,
}

impl MultinomialFit {
    pub fn t_max(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols() - 1
    }

    /// Linear scores for one covariate row.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.t_max())
            .map(|t| self.weights[(t, 0)] + x.iter().enumerate().map(|(j, v)| self.weights[(t, j + 1)] * v).sum::<f64>())
            .collect()
    }

    /// Class probabilities for one covariate row.
    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    /// Class probabilities for every row of `x`, as an n x T matrix.
    pub fn prob_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let scores = with_intercept(x) * self.weights.transpose();
        softmax_rows(scores)
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn softmax_rows(mut s: DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = s.shape();
    for i in 0..n {
        let m = (0..t).map(|k| s[(i, k)]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..t {
            let e = (s[(i, k)] - m).exp();
            s[(i, k)] = e;
            z += e;
        }
        for k in 0..t {
            s[(i, k)] /= z;
        }
    }
    s
}

/// Dense problem state: design with intercept column and one-hot labels.
struct Problem {
    xi: DMatrix<f64>,
    /// Zero-based label per row.
    label: Vec<usize>,
    t_max: usize,
    ridge: f64,
}

impl Problem {
    fn d(&self) -> usize {
        self.xi.ncols()
    }

    fn n_free(&self) -> usize {
        (self.t_max - 1) * self.d()
    }

    /// Full T x d weight matrix from the free parameters (row-major blocks
    /// for labels 2..T).
    fn unpack(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.d();
        let mut w = DMatrix::zeros(self.t_max, d);
        for t in 1..self.t_max {
            for j in 0..d {
                w[(t, j)] = theta[(t - 1) * d + j];
            }
        }
        w
    }

    /// Objective and gradient; also returns the probability matrix.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let w = self.unpack(theta);
        let scores = &self.xi * w.transpose();
        let n = self.xi.nrows();
        let mut nll = 0.0;
        for i in 0..n {
            let row: Vec<f64> = (0..self.t_max).map(|t| scores[(i, t)]).collect();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            nll += lse - row[self.label[i]];
        }
        let mut probs = softmax_rows(scores);
        let obj = nll + 0.5 * self.ridge * theta.iter().map(|v| v * v).sum::<f64>();
        // Residual P - Y, then gradient = resid^T X + ridge theta.
        for i in 0..n {
            probs[(i, self.label[i])] -= 1.0;
        }
        let g = probs.tr_mul(&self.xi);
        for i in 0..n {
            probs[(i, self.label[i])] += 1.0;
        }
        let d = self.d();
        let mut grad = vec![0.0; self.n_free()];
        for t in 1..self.t_max {
            for j in 0..d {
                let k = (t - 1) * d + j;
                grad[k] = g[(t, j)] + self.ridge * theta[k];
            }
        }
        (obj, grad, probs)
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let w = self.unpack(theta);
        let scores = &self.xi * w.transpose();
        let mut nll = 0.0;
        for i in 0..self.xi.nrows() {
            let m = (0..self.t_max).map(|t| scores[(i, t)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..self.t_max).map(|t| (scores[(i, t)] - m).exp()).sum::<f64>().ln();
            nll += lse - scores[(i, self.label[i])];
        }
        nll + 0.5 * self.ridge * theta.iter().map(|v| v * v).sum::<f64>()
    }

    fn hessian(&self, probs: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.d();
        let k = self.t_max - 1;
        let n = self.xi.nrows();
        let mut h = DMatrix::zeros(k * d, k * d);
        let mut scaled = self.xi.clone();
        for s in 1..self.t_max {
            for t in s..self.t_max {
                for i in 0..n {
                    let ps = probs[(i, s)];
                    let c = if s == t { ps * (1.0 - ps) } else { -ps * probs[(i, t)] };
                    for j in 0..d {
                        scaled[(i, j)] = c * self.xi[(i, j)];
                    }
                }
                let block = self.xi.tr_mul(&scaled);
                let (bs, bt) = ((s - 1) * d, (t - 1) * d);
                h.view_mut((bs, bt), (d, d)).copy_from(&block);
                if s != t {
                    h.view_mut((bt, bs), (d, d)).copy_from(&block.transpose());
                }
            }
        }
        for j in 0..k * d {
            h[(j, j)] += self.ridge;
        }
        h
    }

    fn converged(obj: f64, grad: &[f64]) -> bool {
        max_abs(grad) <= GRAD_TOL * (1.0 + obj.abs())
    }

    fn newton(&self) -> Result<Vec<f64>, FitError> {
        let mut theta = vec![0.0; self.n_free()];
        let (mut obj, mut grad, mut probs) = self.eval(&theta);
        for iter in 0..MAX_NEWTON_ITER {
            // Quadratic convergence makes the absolute bound cheap here.
            if max_abs(&grad) <= GRAD_TOL {
                return Ok(theta);
            }
            let step = match self.hessian(&probs).cholesky() {
                Some(c) => c.solve(&DVector::from_column_slice(&grad)),
                None => return Err(FitError::Separation { iterations: iter }),
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
                let cobj = self.objective(&cand);
                if cobj <= obj {
                    theta = cand;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            let prev = obj;
            (obj, grad, probs) = self.eval(&theta);
            debug_assert!(obj <= prev + 1e-9 * (1.0 + prev.abs()));
            if !accepted {
                return self.finish(theta, obj, &grad, iter);
            }
        }
        if Self::converged(obj, &grad) {
            Ok(theta)
        } else {
            Err(FitError::Separation { iterations: MAX_NEWTON_ITER })
        }
    }

    fn lbfgs(&self) -> Result<Vec<f64>, FitError> {
        let dim = self.n_free();
        let mut theta = vec![0.0; dim];
        let (mut obj, mut grad, _) = self.eval(&theta);
        let mut s_hist: Vec<Vec<f64>> = Vec::new();
        let mut y_hist: Vec<Vec<f64>> = Vec::new();
        for iter in 0..MAX_LBFGS_ITER {
            if Self::converged(obj, &grad) {
                return Ok(theta);
            }
            let mut dir = two_loop(&grad, &s_hist, &y_hist);
            if s_hist.is_empty() {
                let gn = max_abs(&grad).max(1.0);
                dir.iter_mut().for_each(|v| *v /= gn);
            }
            let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
            if !(slope > 0.0) {
                // Not a descent direction; restart from steepest descent.
                s_hist.clear();
                y_hist.clear();
                continue;
            }
            let mut t = 1.0;
            let mut next = None;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a - t * d).collect();
                let cobj = self.objective(&cand);
                if cobj <= obj - 1e-4 * t * slope {
                    next = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            let Some(cand) = next else {
                if !s_hist.is_empty() {
                    s_hist.clear();
                    y_hist.clear();
                    continue;
                }
                return self.finish(theta, obj, &grad, iter);
            };
            let (cobj, cgrad, _) = self.eval(&cand);
            let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = cgrad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            if s.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() > 1e-12 {
                if s_hist.len() == LBFGS_MEMORY {
                    s_hist.remove(0);
                    y_hist.remove(0);
                }
                s_hist.push(s);
                y_hist.push(y);
            }
            theta = cand;
            obj = cobj;
            grad = cgrad;
        }
        if Self::converged(obj, &grad) {
            Ok(theta)
        } else {
            Err(FitError::NotConverged {
                iterations: MAX_LBFGS_ITER,
                gradient: max_abs(&grad),
            })
        }
    }

    /// Line search stalled: accept if the gradient is already at rounding
    /// level.
    fn finish(&self, theta: Vec<f64>, obj: f64, grad: &[f64], iter: usize) -> Result<Vec<f64>, FitError> {
        if max_abs(grad) <= 1e-6 * (1.0 + obj.abs()) {
            Ok(theta)
        } else {
            Err(FitError::NotConverged {
                iterations: iter,
                gradient: max_abs(grad),
            })
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, g| m.max(g.abs()))
}

/// L-BFGS two-loop recursion: approximates `H^{-1} g`.
fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q = g.to_vec();
    let m = s_hist.len();
    let mut alpha = vec![0.0; m];
    for k in (0..m).rev() {
        let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
        alpha[k] = rho * dot(&s_hist[k], &q);
        q.iter_mut().zip(&y_hist[k]).for_each(|(qi, yi)| *qi -= alpha[k] * yi);
    }
    if m > 0 {
        let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for k in 0..m {
        let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
        let beta = rho * dot(&y_hist[k], &q);
        q.iter_mut().zip(&s_hist[k]).for_each(|(qi, si)| *qi += (alpha[k] - beta) * si);
    }
    q
}

fn check_labels(x: &DMatrix<f64>, r: &[u32], t_max: usize) -> Result<Vec<usize>, FitError> {
    if r.len() != x.nrows() {
        return Err(FitError::InvalidInput("label length does not match design".into()));
    }
    if t_max < 2 {
        return Err(FitError::InvalidInput("need at least two labels".into()));
    }
    r.iter()
        .map(|&t| {
            if t >= 1 && (t as usize) <= t_max {
                Ok(t as usize - 1)
            } else {
                Err(FitError::InvalidInput(format!("label {t} outside 1..={t_max}")))
            }
        })
        .collect()
}

/// Penalized negative log-likelihood of `weights` (T x (p+1), row 0 is the
/// reference and is not penalized because it is pinned to zero).
pub fn multinomial_objective(weights: &DMatrix<f64>, x: &DMatrix<f64>, r: &[u32], ridge: f64) -> Result<f64, FitError> {
    let t_max = weights.nrows();
    let problem = Problem {
        xi: with_intercept(x),
        label: check_labels(x, r, t_max)?,
        t_max,
        ridge,
    };
    Ok(problem.objective(&pack(weights)))
}

/// Gradient of [`multinomial_objective`] as a T x (p+1) matrix; row 0 is
/// zero.
pub fn multinomial_gradient(weights: &DMatrix<f64>, x: &DMatrix<f64>, r: &[u32], ridge: f64) -> Result<DMatrix<f64>, FitError> {
    let t_max = weights.nrows();
    let problem = Problem {
        xi: with_intercept(x),
        label: check_labels(x, r, t_max)?,
        t_max,
        ridge,
    };
    let (_, grad, _) = problem.eval(&pack(weights));
    Ok(problem.unpack(&grad))
}

fn pack(weights: &DMatrix<f64>) -> Vec<f64> {
    let (t_max, d) = weights.shape();
    (1..t_max).flat_map(|t| (0..d).map(move |j| (t, j))).map(|(t, j)| weights[(t, j)]).collect()
}

/// Ridge-penalized multinomial logistic regression of `r` (labels in
/// `1..=t_max`) on `x`. The penalty covers every free parameter, intercepts
/// included.
pub fn fit_multinomial(x: &DMatrix<f64>, r: &[u32], t_max: usize, ridge: f64) -> Result<MultinomialFit, FitError> {
    let label = check_labels(x, r, t_max)?;
    if x.nrows() < t_max {
        return Err(FitError::TooFewRows {
            got: x.nrows(),
            need: t_max,
        });
    }
    if !(ridge >= 0.0) {
        return Err(FitError::InvalidInput("ridge must be nonnegative".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FitError::InvalidInput("non-finite covariate".into()));
    }
    let problem = Problem {
        xi: with_intercept(x),
        label,
        t_max,
        ridge,
    };
    let theta = if problem.n_free() <= NEWTON_MAX_PARAMS {
        problem.newton()?
    } else {
        problem.lbfgs()?
    };
    Ok(MultinomialFit {
        weights: problem.unpack(&theta),
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::fit_logistic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn draw(seed: u64, n: usize, p: usize, t_max: u32) -> (DMatrix<f64>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let r = (0..n)
            .map(|i| {
                let shift = if x[(i, 0)] > 0.0 { 1 } else { 0 };
                ((rng.gen_range(0..t_max) + shift) % t_max) + 1
            })
            .collect();
        (x, r)
    }

    #[test]
    fn two_labels_match_binary_logistic() {
        let (x, r) = draw(1, 120, 3, 2);
        let fit = fit_multinomial(&x, &r, 2, 0.7).unwrap();
        let y: Vec<f64> = r.iter().map(|&t| f64::from(t == 2)).collect();
        let bin = fit_logistic(&x, &y, None, 0.7).unwrap();
        let mp = fit.prob_matrix(&x);
        let bp = bin.predict_mean(&x);
        for i in 0..x.nrows() {
            assert!((mp[(i, 1)] - bp[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn intercept_only_recovers_frequencies() {
        let x = DMatrix::zeros(100, 0);
        let mut r = vec![1u32; 10];
        r.extend(vec![2u32; 20]);
        r.extend(vec![3u32; 70]);
        let fit = fit_multinomial(&x, &r, 3, 0.0).unwrap();
        let p = fit.probs(&[]);
        for (got, want) in p.iter().zip([0.1, 0.2, 0.7]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let fit = MultinomialFit {
            weights: DMatrix::zeros(4, 3),
            ridge: 0.0,
        };
        for v in fit.probs(&[0.3, -2.0]) {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, r) = draw(2, 200, 4, 5);
        let fit = fit_multinomial(&x, &r, 5, 1e-4).unwrap();
        let pm = fit.prob_matrix(&x);
        for i in 0..x.nrows() {
            let s: f64 = (0..5).map(|t| pm[(i, t)]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(fit.weights.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, r) = draw(3, 60, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut w = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-0.5..0.5));
        w.row_mut(0).fill(0.0);
        let g = multinomial_gradient(&w, &x, &r, 0.3).unwrap();
        let h = 1e-6;
        for t in 1..3 {
            for j in 0..3 {
                let mut up = w.clone();
                let mut dn = w.clone();
                up[(t, j)] += h;
                dn[(t, j)] -= h;
                let fd = (multinomial_objective(&up, &x, &r, 0.3).unwrap() - multinomial_objective(&dn, &x, &r, 0.3).unwrap()) / (2.0 * h);
                assert!((fd - g[(t, j)]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn lbfgs_agrees_with_newton() {
        let (x, r) = draw(4, 300, 4, 4);
        let problem = Problem {
            xi: with_intercept(&x),
            label: r.iter().map(|&t| t as usize - 1).collect(),
            t_max: 4,
            ridge: 0.01,
        };
        let a = problem.newton().unwrap();
        let b = problem.lbfgs().unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-5, "{u} vs {v}");
        }
    }

    #[test]
    fn json_round_trip() {
        let (x, r) = draw(5, 50, 2, 3);
        let fit = fit_multinomial(&x, &r, 3, 1e-4).unwrap();
        let text = serde_json::to_string(&fit).unwrap();
        let back: MultinomialFit = serde_json::from_str(&text).unwrap();
        assert_eq!(fit, back);
    }
}
