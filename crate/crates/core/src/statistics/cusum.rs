use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::crt::{Evaluation, StatOutcome, Statistic};
use crate::dataset::{Family, LabeledDataset};
use crate::glm::{fit_ols_ridge, FitError};

/// `P(sup |B(t)| > c)` for a Brownian bridge `B` on `[0, 1]`.
pub fn kolmogorov_tail(c: f64) -> f64 {
    if !(c > 0.0) {
        return 1.0;
    }
    if c < 1.0 {
        // The alternating series converges slowly here; use the dual form of
        // the distribution function instead.
        let s: f64 = (1..=100)
            .map(|j| {
                let k = (2 * j - 1) as f64;
                (-k * k * PI * PI / (8.0 * c * c)).exp()
            })
            .sum();
        return (1.0 - (2.0 * PI).sqrt() / c * s).clamp(0.0, 1.0);
    }
    let s: f64 = (1..=100)
        .map(|j| {
            let j = j as f64;
            let sign = if j as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * j * j * c * c).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CusumResult {
    pub statistic: f64,
    pub tau_hat: u32,
    pub p_value: f64,
    pub profile: Vec<f64>,
}

/// Partial sums of pooled OLS residuals, evaluated at the label block
/// boundaries.
#[derive(Clone, Debug)]
pub struct OlsCusum {
    resid: Vec<f64>,
    scale: f64,
}

impl OlsCusum {
    pub fn new(ds: &LabeledDataset) -> Result<Self, FitError> {
        if ds.family() != Family::Gaussian {
            return Err(FitError::InvalidInput("ols-cusum needs a gaussian outcome".into()));
        }
        let (n, p) = (ds.n(), ds.p());
        if n <= p + 2 {
            return Err(FitError::TooFewRows { got: n, need: p + 3 });
        }
        let fit = fit_ols_ridge(ds.x(), ds.y(), None, 0.0)?;
        let pred = fit.linear_predictor(ds.x());
        let resid: Vec<f64> = ds.y().iter().zip(&pred).map(|(y, f)| y - f).collect();
        let rss: f64 = resid.iter().map(|e| e * e).sum();
        let sigma = (rss / (n - p - 1) as f64).sqrt();
        Ok(Self {
            resid,
            scale: sigma * (n as f64).sqrt(),
        })
    }

    /// `|S_tau| / (sigma sqrt(n))` per boundary; zero residuals give a zero
    /// profile.
    pub fn profile(&self, labels: &[u32], t_max: u32) -> Vec<f64> {
        let mut sums = vec![0.0; t_max as usize];
        for (e, &l) in self.resid.iter().zip(labels) {
            sums[l as usize - 1] += e;
        }
        let mut acc = 0.0;
        sums[..t_max as usize - 1]
            .iter()
            .map(|s| {
                acc += s;
                if self.scale > 0.0 {
                    acc.abs() / self.scale
                } else {
                    0.0
                }
            })
            .collect()
    }
}

impl Statistic for OlsCusum {
    fn name(&self) -> &str {
        "ols-cusum"
    }

    fn evaluate(&self, ds: &LabeledDataset, labels: &[u32]) -> StatOutcome {
        StatOutcome::from_profile(self.profile(labels, ds.t_max()))
    }
}

/// Residual CUSUM test on the observed labels.
pub fn ols_cusum(ds: &LabeledDataset) -> Result<CusumResult, FitError> {
    let stat = OlsCusum::new(ds)?;
    let e = Evaluation::from_profile(stat.profile(ds.r(), ds.t_max())).expect("cusum profile is finite");
    Ok(CusumResult {
        statistic: e.statistic,
        tau_hat: e.tau_hat.get(),
        p_value: if e.statistic > 0.0 { kolmogorov_tail(e.statistic) } else { 1.0 },
        profile: e.profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Direct alternating series, independent of the small-c branch.
    fn series(c: f64, terms: usize) -> f64 {
        2.0 * (1..=terms)
            .map(|j| {
                let j = j as f64;
                (-1f64).powf(j + 1.0) * (-2.0 * j * j * c * c).exp()
            })
            .sum::<f64>()
    }

    #[test]
    fn classical_critical_value() {
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 5e-3);
        assert!((kolmogorov_tail(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn both_branches_agree() {
        for c in [0.6, 0.8, 0.95, 1.0, 1.2] {
            let dual = {
                let s: f64 = (1..=100)
                    .map(|j| {
                        let k = (2 * j - 1) as f64;
                        (-k * k * PI * PI / (8.0 * c * c)).exp()
                    })
                    .sum();
                1.0 - (2.0 * PI).sqrt() / c * s
            };
            assert!((dual - series(c, 2000)).abs() < 1e-10, "c = {c}");
            assert!((kolmogorov_tail(c) - series(c, 2000)).abs() < 1e-10);
        }
        assert_eq!(kolmogorov_tail(0.0), 1.0);
        assert!(kolmogorov_tail(0.2) > 0.999);
    }

    #[test]
    fn exact_fit_has_unit_p_value() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..20).map(|i| 1.0 + 2.0 * i as f64).collect();
        let r: Vec<u32> = (0..20).map(|i| i as u32 / 5 + 1).collect();
        let ds = LabeledDataset::new(y, x, r, Family::Gaussian).unwrap();
        let res = ols_cusum(&ds).unwrap();
        assert!(res.statistic < 1e-6);
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn mean_shift_is_detected_at_the_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r: Vec<u32> = (0..n).map(|i| (i * 4 / n) as u32 + 1).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| x[(i, 0)] + if r[i] > 2 { 1.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let ds = LabeledDataset::new(y, x, r, Family::Gaussian).unwrap();
        let res = ols_cusum(&ds).unwrap();
        assert_eq!(res.tau_hat, 2);
        assert!(res.p_value < 0.01);
    }

    #[test]
    fn bernoulli_is_rejected() {
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let ds = LabeledDataset::new(vec![0.0; 10], x, vec![1, 2, 1, 2, 1, 2, 1, 2, 1, 2], Family::Bernoulli).unwrap();
        assert!(ols_cusum(&ds).is_err());
    }
}
