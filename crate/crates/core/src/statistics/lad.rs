use nalgebra::DMatrix;

use super::{ridge_profile, StatError};
use crate::crt::{StatOutcome, Statistic};
use crate::dataset::LabeledDataset;
use crate::lmm::{DistillKind, Distillation};

/// Minimizer over `a` of
/// `sum_i (y_i - a m0_i - (1 - a) m1_i)^2 + lambda (a - 1/2)^2`.
pub fn lad_mixing_coefficient(y: &[f64], m0: &[f64], m1: &[f64], lambda: f64) -> f64 {
    let (mut sdd, mut sdy) = (0.0, 0.0);
    for ((&yi, &a), &b) in y.iter().zip(m0).zip(m1) {
        let d = a - b;
        sdd += d * d;
        sdy += d * (yi - 0.5 * (a + b));
    }
    0.5 + sdy / (sdd + lambda)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadMeanConfig {
    /// Pull of the mixing coefficient towards 1/2.
    pub lambda_reg: f64,
    pub min_segment: usize,
}

impl Default for LadMeanConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1.0,
            min_segment: 1,
        }
    }
}

/// Largest gap between the mixing coefficients fitted before and after a
/// split, using the two frozen regime means.
#[derive(Clone, Debug)]
pub struct LadMeanStatistic {
    /// `D_i^2` with `D = m0 - m1`.
    dd: Vec<f64>,
    /// `D_i (y_i - (m0_i + m1_i) / 2)`.
    dy: Vec<f64>,
    cfg: LadMeanConfig,
}

impl LadMeanStatistic {
    pub fn new(d: &Distillation, ds: &LabeledDataset, cfg: LadMeanConfig) -> Result<Self, StatError> {
        if !(cfg.lambda_reg > 0.0) {
            return Err(StatError::InvalidConfig("lambda_reg must be positive".into()));
        }
        if cfg.min_segment == 0 {
            return Err(StatError::InvalidConfig("min_segment must be positive".into()));
        }
        if d.n() != ds.n() {
            return Err(StatError::InvalidConfig(format!("distillation has {} rows, data has {}", d.n(), ds.n())));
        }
        let (dd, dy) = ds
            .y()
            .iter()
            .zip(d.m0.iter().zip(&d.m1))
            .map(|(&y, (&a, &b))| {
                let g = a - b;
                (g * g, g * (y - 0.5 * (a + b)))
            })
            .unzip();
        Ok(Self { dd, dy, cfg })
    }

    /// `|a_pre - a_post|` per split via per-label running sums.
    pub fn profile(&self, labels: &[u32], t_max: u32) -> Vec<f64> {
        let t = t_max as usize;
        let mut count = vec![0usize; t];
        let mut sdd = vec![0.0; t];
        let mut sdy = vec![0.0; t];
        for (i, &l) in labels.iter().enumerate() {
            let k = l as usize - 1;
            count[k] += 1;
            sdd[k] += self.dd[i];
            sdy[k] += self.dy[i];
        }
        let lam = self.cfg.lambda_reg;
        // Suffix sums accumulated from the top, not as total minus prefix.
        let mut post = vec![(0usize, 0.0, 0.0); t];
        let mut acc = (0usize, 0.0, 0.0);
        for k in (1..t).rev() {
            acc = (acc.0 + count[k], acc.1 + sdd[k], acc.2 + sdy[k]);
            post[k - 1] = acc;
        }
        let mut pre = (0usize, 0.0, 0.0);
        (0..t - 1)
            .map(|k| {
                pre = (pre.0 + count[k], pre.1 + sdd[k], pre.2 + sdy[k]);
                let q = post[k];
                if pre.0 < self.cfg.min_segment || q.0 < self.cfg.min_segment {
                    return f64::NEG_INFINITY;
                }
                // The 1/2 offsets cancel in the difference.
                (pre.2 / (pre.1 + lam) - q.2 / (q.1 + lam)).abs()
            })
            .collect()
    }
}

impl Statistic for LadMeanStatistic {
    fn name(&self) -> &str {
        "mend-lad-mean"
    }

    fn evaluate(&self, ds: &LabeledDataset, labels: &[u32]) -> StatOutcome {
        StatOutcome::from_profile(self.profile(labels, ds.t_max()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadReprConfig {
    pub ridge: f64,
    pub min_segment: usize,
}

impl Default for LadReprConfig {
    fn default() -> Self {
        Self {
            ridge: 1.0,
            min_segment: 10,
        }
    }
}

/// Segment ridge refits on the frozen distilled design.
#[derive(Clone, Debug)]
pub struct LadReprStatistic {
    design: DMatrix<f64>,
    cfg: LadReprConfig,
}

impl LadReprStatistic {
    pub fn new(d: &Distillation, ds: &LabeledDataset, cfg: LadReprConfig) -> Result<Self, StatError> {
        if !(cfg.ridge >= 0.0) {
            return Err(StatError::InvalidConfig("ridge must be nonnegative".into()));
        }
        if cfg.min_segment == 0 {
            return Err(StatError::InvalidConfig("min_segment must be positive".into()));
        }
        if d.n() != ds.n() {
            return Err(StatError::InvalidConfig(format!("distillation has {} rows, data has {}", d.n(), ds.n())));
        }
        if d.kind != DistillKind::Repr && !d.selected.is_empty() {
            return Err(StatError::InvalidConfig("mean distillation with selected features".into()));
        }
        Ok(Self { design: d.design(ds), cfg })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn profile(&self, ds: &LabeledDataset, labels: &[u32]) -> Vec<f64> {
        ridge_profile(&self.design, ds.y(), labels, ds.t_max(), self.cfg.ridge, self.cfg.min_segment)
    }
}

impl Statistic for LadReprStatistic {
    fn name(&self) -> &str {
        "mend-lad-repr"
    }

    fn evaluate(&self, ds: &LabeledDataset, labels: &[u32]) -> StatOutcome {
        StatOutcome::from_profile(self.profile(ds, labels))
    }
}
