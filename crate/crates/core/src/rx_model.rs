//! The time-label model `p(R | X)` and counterfeit label draws.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DataError, LabeledDataset, UnlabeledDataset};
use crate::glm::{fit_multinomial, FitError, MultinomialFit};

/// Ridge used by [`TimeLabelModel::learn`] unless told otherwise.
pub const DEFAULT_RX_RIDGE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RxError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("ShapeMismatch: model has {expected} features, input has {got}")]
    Width { expected: usize, got: usize },
    #[error("InvalidModel: {0}")]
    Invalid(String),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
}

/// Multinomial-logit law of the time label given covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeLabelModel {
    t_max: u32,
    #[serde(flatten)]
    fit: MultinomialFit,
}

impl TimeLabelModel {
    /// Fits `p(R | X)` on the labeled rows plus any unlabeled rows. Outcomes
    /// are never read.
    pub fn learn(labeled: &LabeledDataset, unlabeled: Option<&UnlabeledDataset>, ridge: f64) -> Result<Self, RxError> {
        let t_max = labeled.t_max();
        let (x, r) = match unlabeled {
            None => (labeled.x().clone(), labeled.r().to_vec()),
            Some(u) => {
                u.check_compatible(labeled)?;
                let (n, m, p) = (labeled.n(), u.m(), labeled.p());
                let x = DMatrix::from_fn(n + m, p, |i, j| if i < n { labeled.x()[(i, j)] } else { u.x()[(i - n, j)] });
                let mut r = labeled.r().to_vec();
                r.extend_from_slice(u.r());
                (x, r)
            }
        };
        let fit = fit_multinomial(&x, &r, t_max as usize, ridge)?;
        Ok(Self { t_max, fit })
    }

    pub fn from_fit(fit: MultinomialFit) -> Result<Self, RxError> {
        let t = fit.t_max();
        if t < 2 {
            return Err(RxError::Invalid("need at least two labels".into()));
        }
        if fit.weights.row(0).iter().any(|&v| v != 0.0) {
            return Err(RxError::Invalid("reference row must be zero".into()));
        }
        if fit.weights.iter().any(|v| !v.is_finite()) {
            return Err(RxError::Invalid("non-finite weight".into()));
        }
        Ok(Self {
            t_max: t as u32,
            fit,
        })
    }

    pub fn t_max(&self) -> u32 {
        self.t_max
    }

    pub fn n_features(&self) -> usize {
        self.fit.n_features()
    }

    pub fn fit(&self) -> &MultinomialFit {
        &self.fit
    }

    /// `p(R = t | x)` for `t = 1..=T`.
    pub fn class_probs(&self, x: &[f64]) -> Vec<f64> {
        self.fit.probs(x)
    }

    /// Precomputes per-row cumulative probabilities for repeated draws.
    pub fn sampler(&self, x: &DMatrix<f64>) -> Result<LabelSampler, RxError> {
        if x.ncols() != self.n_features() {
            return Err(RxError::Width {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        let probs = self.fit.prob_matrix(x);
        let t = self.t_max as usize;
        let mut cum = Vec::with_capacity(x.nrows() * t);
        for i in 0..x.nrows() {
            let mut acc = 0.0;
            for k in 0..t {
                acc += probs[(i, k)];
                cum.push(acc);
            }
            // Guard against rounding leaving the last bin short of 1.
            *cum.last_mut().expect("t >= 2") = f64::INFINITY;
        }
        Ok(LabelSampler { t, cum })
    }

    /// One independent label per row of `x`.
    pub fn sample_labels<R: Rng + ?Sized>(&self, x: &DMatrix<f64>, rng: &mut R) -> Result<Vec<u32>, RxError> {
        Ok(self.sampler(x)?.sample(rng))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RxError> {
        let raw: Self = serde_json::from_str(text)?;
        if raw.fit.t_max() != raw.t_max as usize {
            return Err(RxError::Invalid(format!("t_max {} but {} weight rows", raw.t_max, raw.fit.t_max())));
        }
        Self::from_fit(raw.fit)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RxError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RxError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Inverse-CDF categorical sampler: one uniform per row.
#[derive(Clone, Debug)]
pub struct LabelSampler {
    t: usize,
    cum: Vec<f64>,
}

impl LabelSampler {
    pub fn n(&self) -> usize {
        self.cum.len() / self.t
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        self.cum
            .chunks_exact(self.t)
            .map(|row| {
                let u: f64 = rng.gen();
                row.iter().position(|&c| u < c).expect("last bin is unbounded") as u32 + 1
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Family;
    use crate::rng::substream;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn model(weights: DMatrix<f64>) -> TimeLabelModel {
        TimeLabelModel::from_fit(MultinomialFit { weights, ridge: 0.0 }).unwrap()
    }

    #[test]
    fn zero_scores_are_uniform() {
        let m = model(DMatrix::zeros(3, 2));
        for p in m.class_probs(&[1.7]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_ignore_a_common_shift() {
        let w = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.4, -1.0, -0.3, 2.0]);
        let a = crate::glm::softmax(&model(w.clone()).fit().scores(&[0.8]));
        let shifted: Vec<f64> = model(w).fit().scores(&[0.8]).iter().map(|s| s + 123.0).collect();
        let b = crate::glm::softmax(&shifted);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_labels_with_log_three_gap() {
        let w = DMatrix::from_row_slice(2, 1, &[0.0, -(3f64.ln())]);
        let p = model(w).class_probs(&[]);
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn balanced_draws_are_balanced() {
        let m = model(DMatrix::zeros(2, 1));
        let x = DMatrix::zeros(100_000, 0);
        let labels = m.sample_labels(&x, &mut substream(1, 0)).unwrap();
        let ones = labels.iter().filter(|&&l| l == 1).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() < 0.01);
    }

    #[test]
    fn dominant_class_always_drawn() {
        let w = DMatrix::from_row_slice(3, 1, &[0.0, -1000.0, -1000.0]);
        let labels = model(w).sample_labels(&DMatrix::zeros(500, 0), &mut substream(2, 0)).unwrap();
        assert!(labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn same_stream_same_labels() {
        let w = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.2, 1.0, -0.5, -1.0]);
        let m = model(w);
        let x = DMatrix::from_fn(50, 1, |i, _| i as f64 / 25.0 - 1.0);
        let a = m.sample_labels(&x, &mut substream(9, 4)).unwrap();
        let b = m.sample_labels(&x, &mut substream(9, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frequencies_pass_chi_square() {
        let w = DMatrix::from_row_slice(4, 1, &[0.0, 0.5, -0.7, 1.1]);
        let m = model(w);
        let probs = m.class_probs(&[]);
        let n = 100_000;
        let labels = m.sample_labels(&DMatrix::zeros(n, 0), &mut substream(3, 0)).unwrap();
        let mut counts = [0usize; 4];
        labels.iter().for_each(|&l| counts[l as usize - 1] += 1);
        let stat: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let pval = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
        assert!(pval > 0.001, "chi-square p = {pval}");
    }

    #[test]
    fn independent_covariates_give_flat_model() {
        for rep in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(rep);
            let n = 2000;
            let x = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.7..1.7));
            let r: Vec<u32> = (0..n).map(|_| if rng.gen::<f64>() < 0.3 { 1 } else { 2 }).collect();
            let ds = LabeledDataset::new(vec![0.0; n], x, r.clone(), Family::Gaussian).unwrap();
            let m = TimeLabelModel::learn(&ds, None, DEFAULT_RX_RIDGE).unwrap();
            let slope = (m.fit().weights[(1, 1)].powi(2) + m.fit().weights[(1, 2)].powi(2)).sqrt();
            assert!(slope <= 0.2, "replicate {rep}: slope norm {slope}");
            let freq = r.iter().filter(|&&t| t == 1).count() as f64 / n as f64;
            assert!((m.class_probs(&[0.0, 0.0])[0] - freq).abs() < 0.05);
        }
    }

    #[test]
    fn constant_covariates_reproduce_label_frequencies() {
        let r: Vec<u32> = [1, 1, 2, 3, 3, 3, 3, 3, 2, 1].to_vec();
        let ds = LabeledDataset::new(vec![0.0; 10], DMatrix::zeros(10, 2), r, Family::Gaussian).unwrap();
        let m = TimeLabelModel::learn(&ds, None, DEFAULT_RX_RIDGE).unwrap();
        let p = m.class_probs(&[0.0, 0.0]);
        for (got, want) in p.iter().zip([0.3, 0.2, 0.5]) {
            assert!((got - want).abs() < 1e-3);
        }
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let w = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.2, 1.0, -0.5, -1.0]);
        let m = model(w);
        let back = TimeLabelModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        assert!(TimeLabelModel::from_json("{\"t_max\":3,\"weights\":[[1.0]],\"ridge\":0.0}").is_err());
    }

    /// Exact `p(R | X)` weights for Scenario 1 covariates: `X | R = t` is
    /// normal with mean `0.2 t` on the first five coordinates and AR(1)
    /// covariance (rho 0.5) there, identity elsewhere, with equal label
    /// priors. The Bayes posterior is then a multinomial logit.
    fn scenario1_true_weights(t_max: usize, p: usize) -> DMatrix<f64> {
        let b = 5;
        let sigma = DMatrix::from_fn(b, b, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let prec = sigma.try_inverse().unwrap();
        let mean = |t: usize| nalgebra::DVector::from_element(b, 0.2 * t as f64);
        let quad = |t: usize| (mean(t).transpose() * &prec * mean(t))[(0, 0)];
        let mut w = DMatrix::zeros(t_max, p + 1);
        for t in 2..=t_max {
            w[(t - 1, 0)] = -0.5 * (quad(t) - quad(1));
            let slope = &prec * (mean(t) - mean(1));
            for j in 0..b {
                w[(t - 1, j + 1)] = slope[j];
            }
        }
        w
    }

    #[test]
    fn unlabeled_rows_shrink_coefficient_error() {
        use crate::simlab::{generate, Scenario, ScenarioConfig};
        let mse = |fit: &TimeLabelModel, truth: &DMatrix<f64>| (fit.fit().weights.clone() - truth).norm_squared() / truth.len() as f64;
        let (mut labeled_only, mut combined) = (0.0, 0.0);
        for rep in 0..50u64 {
            let cfg = ScenarioConfig {
                seed: rep,
                ..ScenarioConfig::new(Scenario::S1)
            };
            let (ds, unlabeled) = generate(&cfg).unwrap();
            let truth = scenario1_true_weights(cfg.t_max as usize, cfg.p);
            labeled_only += mse(&TimeLabelModel::learn(&ds, None, DEFAULT_RX_RIDGE).unwrap(), &truth);
            combined += mse(&TimeLabelModel::learn(&ds, Some(&unlabeled), DEFAULT_RX_RIDGE).unwrap(), &truth);
        }
        assert!(combined < labeled_only, "with unlabeled {combined} vs labeled only {labeled_only}");
        // Doubling the rows should roughly halve the error.
        assert!(combined < 0.75 * labeled_only, "with unlabeled {combined} vs labeled only {labeled_only}");
    }

    #[test]
    fn width_mismatch_is_reported() {
        let m = model(DMatrix::zeros(2, 3));
        assert!(matches!(m.sampler(&DMatrix::zeros(4, 1)), Err(RxError::Width { expected: 2, got: 1 })));
    }
}
