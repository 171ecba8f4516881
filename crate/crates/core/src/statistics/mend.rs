use nalgebra::DMatrix;

use super::{ridge_profile, StatError};
use crate::crt::{StatOutcome, Statistic};
use crate::dataset::{select_rows, split_labels, CandidateTau, Family, LabeledDataset};
use crate::glm::{fit_lasso, fit_logistic, CvOptions, LassoOptions, LassoPenalty, LinearFit};
use crate::rng::substream;

/// Model refit on each side of a candidate split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MendFitter {
    /// Lasso with the penalty chosen by cross-validation on each segment.
    LassoCv,
    LassoFixed(f64),
    /// Ridge (plain OLS at 0) through per-label sufficient statistics.
    OlsRidge(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MendConfig {
    pub fitter: MendFitter,
    /// Minimum rows on each side of an admissible split.
    pub min_segment: usize,
    /// Seed of the fold assignment streams used by [`MendFitter::LassoCv`].
    pub cv_seed: u64,
    pub cv: CvOptions,
    /// Ridge of the segment logistic fits (bernoulli family).
    pub logistic_ridge: f64,
}

impl Default for MendConfig {
    fn default() -> Self {
        Self {
            fitter: MendFitter::LassoCv,
            min_segment: 10,
            cv_seed: 0,
            cv: CvOptions::default(),
            logistic_ridge: 1.0,
        }
    }
}

/// Maximum over splits of the mean squared divergence between the two
/// segment fits, evaluated on every row.
#[derive(Clone, Debug)]
pub struct MendStatistic {
    cfg: MendConfig,
}

impl MendStatistic {
    pub fn new(cfg: MendConfig) -> Result<Self, StatError> {
        if cfg.min_segment < 5 {
            return Err(StatError::InvalidConfig(format!("min_segment must be at least 5, got {}", cfg.min_segment)));
        }
        match cfg.fitter {
            MendFitter::LassoFixed(l) | MendFitter::OlsRidge(l) if !(l >= 0.0) => {
                return Err(StatError::InvalidConfig("penalty must be nonnegative".into()));
            }
            _ => {}
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &MendConfig {
        &self.cfg
    }

    /// Divergence per split, `-inf` where inadmissible.
    pub fn profile(&self, ds: &LabeledDataset, labels: &[u32]) -> Vec<f64> {
        if let (MendFitter::OlsRidge(ridge), Family::Gaussian) = (self.cfg.fitter, ds.family()) {
            return ridge_profile(ds.x(), ds.y(), labels, ds.t_max(), ridge, self.cfg.min_segment);
        }
        (1..ds.t_max())
            .map(|tau| {
                let (pre, post) = split_labels(labels, CandidateTau::from_profile_index(tau as usize - 1));
                if pre.len() < self.cfg.min_segment || post.len() < self.cfg.min_segment {
                    return f64::NEG_INFINITY;
                }
                let side = |rows: &[usize], k: u64| self.fit_segment(ds, rows, tau as u64 * 2 + k);
                match (side(&pre, 0), side(&post, 1)) {
                    (Some(a), Some(b)) => {
                        let pa = a.predict_mean(ds.x());
                        let pb = b.predict_mean(ds.x());
                        pa.iter().zip(&pb).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / ds.n() as f64
                    }
                    _ => f64::NEG_INFINITY,
                }
            })
            .collect()
    }

    fn fit_segment(&self, ds: &LabeledDataset, rows: &[usize], stream: u64) -> Option<LinearFit> {
        let x: DMatrix<f64> = select_rows(ds.x(), rows);
        let y: Vec<f64> = rows.iter().map(|&i| ds.y()[i]).collect();
        let fit = match (ds.family(), self.cfg.fitter) {
            (Family::Bernoulli, _) => fit_logistic(&x, &y, None, self.cfg.logistic_ridge),
            (Family::Gaussian, MendFitter::OlsRidge(r)) => crate::glm::fit_ols_ridge(&x, &y, None, r),
            (Family::Gaussian, fitter) => {
                let penalty = match fitter {
                    MendFitter::LassoFixed(l) => LassoPenalty::Fixed(l),
                    _ => LassoPenalty::CrossValidated(self.cfg.cv),
                };
                let opts = LassoOptions {
                    penalty,
                    ..LassoOptions::default()
                };
                fit_lasso(&x, &y, None, &opts, &mut substream(self.cfg.cv_seed, stream))
            }
        };
        fit.ok()
    }
}

impl Statistic for MendStatistic {
    fn name(&self) -> &str {
        "mend"
    }

    fn evaluate(&self, ds: &LabeledDataset, labels: &[u32]) -> StatOutcome {
        StatOutcome::from_profile(self.profile(ds, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crt::Evaluation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn linear_ds(seed: u64, n: usize, delta: &[f64], noise: f64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = delta.len();
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r: Vec<u32> = (0..n).map(|i| (i * 5 / n) as u32 + 1).collect();
        let y = (0..n)
            .map(|i| {
                let shift = if r[i] > 3 { 1.0 } else { 0.0 };
                (0..p).map(|j| x[(i, j)] * (1.0 + shift * delta[j])).sum::<f64>() + noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        LabeledDataset::new(y, x, r, Family::Gaussian).unwrap()
    }

    fn ols(ridge: f64) -> MendStatistic {
        MendStatistic::new(MendConfig {
            fitter: MendFitter::OlsRidge(ridge),
            ..MendConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn identical_law_without_noise_gives_zero() {
        let ds = linear_ds(1, 200, &[0.0, 0.0, 0.0], 0.0);
        let prof = ols(0.0).profile(&ds, ds.r());
        assert!(prof.iter().all(|v| v.abs() < 1e-12), "{prof:?}");
    }

    #[test]
    fn plug_in_divergence_at_true_split() {
        // Oracle: with exact segment fits the gap is x . delta, so the
        // divergence is the empirical second moment of that product.
        let delta = [0.8, -0.4];
        let ds = linear_ds(2, 2000, &delta, 0.0);
        let prof = ols(0.0).profile(&ds, ds.r());
        let e = Evaluation::from_profile(prof.clone()).unwrap();
        assert_eq!(e.tau_hat.get(), 3);
        let oracle = (0..ds.n())
            .map(|i| (ds.x()[(i, 0)] * delta[0] + ds.x()[(i, 1)] * delta[1]).powi(2))
            .sum::<f64>()
            / ds.n() as f64;
        assert!((prof[2] - oracle).abs() < 1e-9, "{} vs {oracle}", prof[2]);
    }

    #[test]
    fn lasso_refits_find_the_split() {
        let ds = linear_ds(3, 400, &[1.0, 0.0, 0.0, 0.0], 0.3);
        let stat = MendStatistic::new(MendConfig::default()).unwrap();
        let StatOutcome::Value(e) = stat.evaluate(&ds, ds.r()) else { panic!("skipped") };
        assert_eq!(e.tau_hat.get(), 3);
        let fixed = MendStatistic::new(MendConfig {
            fitter: MendFitter::LassoFixed(0.01),
            ..MendConfig::default()
        })
        .unwrap();
        let StatOutcome::Value(f) = fixed.evaluate(&ds, ds.r()) else { panic!("skipped") };
        assert_eq!(f.tau_hat.get(), 3);
    }

    #[test]
    fn generic_path_agrees_with_sufficient_statistics() {
        let ds = linear_ds(4, 150, &[0.5, 0.2], 1.0);
        let fast = ols(0.3).profile(&ds, ds.r());
        // Route the same fitter through per-segment refits.
        let slow: Vec<f64> = (1..ds.t_max())
            .map(|tau| {
                let (pre, post) = split_labels(ds.r(), CandidateTau::from_profile_index(tau as usize - 1));
                let a = ols(0.3).fit_segment(&ds, &pre, 0).unwrap().predict_mean(ds.x());
                let b = ols(0.3).fit_segment(&ds, &post, 0).unwrap().predict_mean(ds.x());
                a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / ds.n() as f64
            })
            .collect();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn bernoulli_refits_use_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r: Vec<u32> = (0..n).map(|i| (i * 3 / n) as u32 + 1).collect();
        let y: Vec<f64> = (0..n).map(|i| f64::from(rng.gen::<f64>() < crate::glm::sigmoid(x[(i, 0)]))).collect();
        let ds = LabeledDataset::new(y, x, r, Family::Bernoulli).unwrap();
        let prof = MendStatistic::new(MendConfig::default()).unwrap().profile(&ds, ds.r());
        assert!(prof.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
    }

    #[test]
    fn rejects_tiny_min_segment() {
        assert!(MendStatistic::new(MendConfig {
            min_segment: 4,
            ..MendConfig::default()
        })
        .is_err());
    }
}
