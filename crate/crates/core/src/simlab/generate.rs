use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Scenario, ScenarioConfig, SimError};
use crate::dataset::{Family, LabeledDataset, UnlabeledDataset};
use crate::glm::{fit_logistic, sigmoid};
use crate::rng::{substream, Stream};

/// Regression coefficients shared by the scenarios; zero beyond the fifth
/// coordinate.
pub const ALPHA_STAR: [f64; 5] = [0.5, -0.5, 0.5, 0.5, -0.5];
/// Direction of the coefficient change.
pub const BETA_CHANGE: [f64; 5] = [0.05; 5];
/// Lag-one correlation of the AR(1) covariance `0.5^|k - j|`.
const AR_RHO: f64 = 0.5;
/// Width of the correlated block carrying `0.2 t` mean drift.
pub const EFFECTIVE: usize = 5;

/// Labels for `n_per_t` rows per time point, in time order.
pub fn balanced_labels(n_per_t: usize, t_max: u32) -> Vec<u32> {
    (1..=t_max).flat_map(|t| std::iter::repeat(t).take(n_per_t)).collect()
}

/// Labels for `total` rows split as evenly as possible, earlier blocks
/// taking the remainder.
fn spread_labels(total: usize, t_max: u32) -> Vec<u32> {
    let t = t_max as usize;
    (0..t)
        .flat_map(|k| std::iter::repeat(k as u32 + 1).take(total / t + usize::from(k < total % t)))
        .collect()
}

fn normal(rng: &mut Stream) -> f64 {
    rng.sample(StandardNormal)
}

/// One row of AR(1)-correlated normals with unit variances and common mean.
fn ar_block(rng: &mut Stream, out: &mut [f64], mean: f64) {
    let innov = (1.0 - AR_RHO * AR_RHO).sqrt();
    let mut prev = normal(rng);
    out[0] = mean + prev;
    for v in out.iter_mut().skip(1) {
        prev = AR_RHO * prev + innov * normal(rng);
        *v = mean + prev;
    }
}

/// Covariates of the simulation design: the first `EFFECTIVE` coordinates
/// are `N(mean(t) 1, Sigma)`, the rest i.i.d. standard normal.
fn covariates(rng: &mut Stream, labels: &[u32], p: usize, block: usize, mean: impl Fn(u32) -> f64) -> DMatrix<f64> {
    let n = labels.len();
    let mut x = DMatrix::zeros(n, p);
    let mut row = vec![0.0; p];
    for (i, &t) in labels.iter().enumerate() {
        let b = block.min(p);
        ar_block(rng, &mut row[..b], mean(t));
        for v in row[b..].iter_mut() {
            *v = normal(rng);
        }
        for j in 0..p {
            x[(i, j)] = row[j];
        }
    }
    x
}

fn coefficients(p: usize, delta: f64, post: bool) -> Vec<f64> {
    let mut c = vec![0.0; p];
    for j in 0..EFFECTIVE.min(p) {
        c[j] = ALPHA_STAR[j] + if post { delta * BETA_CHANGE[j] } else { 0.0 };
    }
    c
}

fn dot(a: &[f64], x: &DMatrix<f64>, i: usize) -> f64 {
    a.iter().enumerate().map(|(j, c)| c * x[(i, j)]).sum()
}

/// Both samples of a scenario, with labeled rows on stream 0 and unlabeled
/// rows on stream 1 of the configuration seed.
fn draw(
    cfg: &ScenarioConfig,
    covs: impl Fn(&mut Stream, &[u32]) -> DMatrix<f64>,
    outcome: impl Fn(&mut Stream, &DMatrix<f64>, usize, u32) -> f64,
) -> Result<(LabeledDataset, UnlabeledDataset), SimError> {
    let mut rng = substream(cfg.seed, 0);
    let labels = balanced_labels(cfg.n_per_t, cfg.t_max);
    let x = covs(&mut rng, &labels);
    let y = (0..labels.len()).map(|i| outcome(&mut rng, &x, i, labels[i])).collect();
    let labeled = LabeledDataset::new(y, x, labels, Family::Gaussian)?;
    let mut rng = substream(cfg.seed, 1);
    let labels = spread_labels(cfg.unlabeled_extra, cfg.t_max);
    let xu = covs(&mut rng, &labels);
    let unlabeled = UnlabeledDataset::new(xu, labels)?;
    Ok((labeled, unlabeled))
}

/// Linear signal plus a `delta x_1^2` perturbation that is the same at every
/// time point.
pub fn gen_scenario1(cfg: &ScenarioConfig) -> Result<(LabeledDataset, UnlabeledDataset), SimError> {
    cfg.expect(Scenario::S1)?;
    let alpha = coefficients(cfg.p, 0.0, false);
    draw(
        cfg,
        |rng, labels| covariates(rng, labels, cfg.p, EFFECTIVE, |t| 0.2 * t as f64),
        |rng, x, i, _| dot(&alpha, x, i) + cfg.delta * x[(i, 0)].powi(2) + normal(rng),
    )
}

/// The transform `(sin x1, x2^3, x3^2, x4, x5^2)`.
pub fn scenario2_features(x: &[f64]) -> [f64; 5] {
    [x[0].sin(), x[1].powi(3), x[2].powi(2), x[3], x[4].powi(2)]
}

/// Nonlinear signal whose coefficients move by `delta beta` after the change
/// point, under a covariate shift that starts at `t = 6`.
pub fn gen_scenario2(cfg: &ScenarioConfig) -> Result<(LabeledDataset, UnlabeledDataset), SimError> {
    cfg.expect(Scenario::S2)?;
    let pre = coefficients(5, cfg.delta, false);
    let post = coefficients(5, cfg.delta, true);
    draw(
        cfg,
        |rng, labels| covariates(rng, labels, 5, 5, |t| if t <= 5 { 0.0 } else { 0.2 * t as f64 }),
        |rng, x, i, t| {
            let row: Vec<f64> = (0..5).map(|j| x[(i, j)]).collect();
            let s = scenario2_features(&row);
            let c = if t > cfg.tau_true { &post } else { &pre };
            s.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() + normal(rng)
        },
    )
}

/// High-dimensional linear model with a coefficient change of size
/// `delta beta` after the change point.
pub fn gen_scenario3(cfg: &ScenarioConfig) -> Result<(LabeledDataset, UnlabeledDataset), SimError> {
    cfg.expect(Scenario::S3)?;
    let pre = coefficients(cfg.p, cfg.delta, false);
    let post = coefficients(cfg.p, cfg.delta, true);
    draw(
        cfg,
        |rng, labels| covariates(rng, labels, cfg.p, EFFECTIVE, |t| 0.2 * t as f64),
        |rng, x, i, t| dot(if t > cfg.tau_true { &post } else { &pre }, x, i) + normal(rng),
    )
}

/// Number of stand-in covariates: age, sex, race, six vital signs and five
/// comorbidity flags.
pub const STANDIN_FEATURES: usize = 14;

/// Synthetic covariates shaped like an emergency-department cohort. Vital
/// signs drift with the month and comorbidity rates rise slowly, so the label
/// model has real signal to pick up.
pub fn gen_standin_covariates(labels: &[u32], rng: &mut Stream) -> DMatrix<f64> {
    const COMORBIDITY: [f64; 5] = [0.04, 0.03, 0.08, 0.12, 0.10];
    const VITAL_DRIFT: [f64; 6] = [0.08, -0.03, -0.02, -0.05, 0.10, 0.07];
    let mut x = DMatrix::zeros(labels.len(), STANDIN_FEATURES);
    for (i, &t) in labels.iter().enumerate() {
        let s = t as f64 - 5.0;
        x[(i, 0)] = normal(rng);
        x[(i, 1)] = f64::from(rng.gen::<f64>() < 0.52);
        x[(i, 2)] = f64::from(rng.gen::<f64>() < 0.35);
        for (k, drift) in VITAL_DRIFT.iter().enumerate() {
            x[(i, 3 + k)] = drift * s + normal(rng);
        }
        for (k, base) in COMORBIDITY.iter().enumerate() {
            x[(i, 9 + k)] = f64::from(rng.gen::<f64>() < base * (1.0 + 0.05 * s));
        }
    }
    x
}

/// Default pseudo-outcome coefficients: intercept first, then one per
/// stand-in covariate.
pub const PSEUDO_ETA: [f64; STANDIN_FEATURES + 1] =
    [-1.0, 0.6, 0.1, -0.1, 0.3, -0.2, 0.1, -0.3, 0.2, 0.3, 0.4, 0.6, 0.3, 0.2, 0.5];

/// Bernoulli outcomes from one fixed logistic model at every time point.
/// `eta` holds the intercept followed by one slope per column.
pub fn gen_pseudo(x: &DMatrix<f64>, r: Vec<u32>, eta: &[f64], rng: &mut Stream) -> Result<LabeledDataset, SimError> {
    if eta.len() != x.ncols() + 1 {
        return Err(SimError::InvalidConfig(format!(
            "eta has {} entries, expected {} (intercept plus one per column)",
            eta.len(),
            x.ncols() + 1
        )));
    }
    let y = (0..x.nrows())
        .map(|i| {
            let eta_i = eta[0] + (0..x.ncols()).map(|j| eta[j + 1] * x[(i, j)]).sum::<f64>();
            f64::from(rng.gen::<f64>() < sigmoid(eta_i))
        })
        .collect();
    Ok(LabeledDataset::new(y, x.clone(), r, Family::Bernoulli)?)
}

/// Logistic model of observed binary outcomes, intercept first, for
/// [`gen_pseudo`]. Ridge-penalized so separable data still has a finite fit.
pub fn fit_pseudo_eta(ds: &LabeledDataset, ridge: f64) -> Result<Vec<f64>, SimError> {
    if ds.family() != Family::Bernoulli {
        return Err(SimError::InvalidConfig("outcome model needs a binary outcome".into()));
    }
    let fit = fit_logistic(ds.x(), ds.y(), None, ridge)?;
    Ok(std::iter::once(fit.intercept).chain(fit.coef).collect())
}

/// Pseudo-simulation replicate on stand-in covariates.
pub fn gen_pseudo_scenario(cfg: &ScenarioConfig) -> Result<(LabeledDataset, UnlabeledDataset), SimError> {
    cfg.expect(Scenario::Pseudo)?;
    let mut rng = substream(cfg.seed, 0);
    let labels = balanced_labels(cfg.n_per_t, cfg.t_max);
    let x = gen_standin_covariates(&labels, &mut rng);
    let labeled = gen_pseudo(&x, labels, &PSEUDO_ETA, &mut rng)?;
    let mut rng = substream(cfg.seed, 1);
    let labels = spread_labels(cfg.unlabeled_extra, cfg.t_max);
    let xu = gen_standin_covariates(&labels, &mut rng);
    Ok((labeled, UnlabeledDataset::new(xu, labels)?))
}
