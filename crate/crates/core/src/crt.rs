//! Conditional randomization test: resample the time labels from `p(R | X)`,
//! recompute a statistic on each counterfeit dataset and rank the observed
//! value among them.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{CandidateTau, LabeledDataset};
use crate::rng::substream;
use crate::rx_model::{RxError, TimeLabelModel};

/// Fraction of skipped resamples above which the test is abandoned.
const MAX_SKIP_FRACTION: f64 = 0.2;

/// One evaluation of a change-point statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub statistic: f64,
    pub tau_hat: CandidateTau,
    /// Divergence per candidate `tau = 1..T-1`; `-inf` where a segment was too
    /// small to fit.
    pub profile: Vec<f64>,
}

impl Evaluation {
    /// Maximum of `profile` with the smallest maximizing `tau`; `None` when
    /// every entry is `-inf`.
    pub fn from_profile(profile: Vec<f64>) -> Option<Self> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in profile.iter().enumerate() {
            if v > f64::NEG_INFINITY && best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, v)| Self {
            statistic: v,
            tau_hat: CandidateTau::from_profile_index(i),
            profile,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StatOutcome {
    Value(Evaluation),
    /// No candidate split was usable for these labels.
    Skip,
}

impl StatOutcome {
    pub fn from_profile(profile: Vec<f64>) -> Self {
        Evaluation::from_profile(profile).map_or(StatOutcome::Skip, StatOutcome::Value)
    }
}

/// A change-point statistic evaluated on the observed covariates and
/// outcomes under a given label vector. Any frozen state (such as a
/// distillation) lives in the implementing value and must not depend on the
/// labels.
pub trait Statistic: Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, ds: &LabeledDataset, labels: &[u32]) -> StatOutcome;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrtOptions {
    /// Number of counterfeit label draws.
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for CrtOptions {
    fn default() -> Self {
        Self {
            k: 199,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl CrtOptions {
    /// Whether the smallest attainable p-value, `1 / (k + 1)`, is at most
    /// `alpha`.
    pub fn can_reject(&self) -> bool {
        1.0 / (self.k as f64 + 1.0) <= self.alpha
    }
}

#[derive(Debug, Error)]
pub enum CrtError {
    #[error("TooManySkips: {skipped} of {k} resamples had no usable split")]
    TooManySkips { skipped: usize, k: usize },
    #[error("ObservedSkipped: the statistic has no usable split on the observed labels")]
    ObservedSkipped,
    #[error("InvalidOptions: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Rx(#[from] RxError),
}

pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of one randomization test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub schema_version: u32,
    pub method: String,
    pub s_obs: f64,
    pub p_value: f64,
    pub tau_hat: u32,
    /// `null` in JSON marks candidate splits that could not be fitted.
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_neg_inf")]
    pub profile: Vec<f64>,
    pub k: usize,
    pub k_effective: usize,
    pub seed: u64,
    pub alpha: f64,
    pub reject: bool,
    pub s_resampled: Vec<f64>,
    pub runtime_ms: u64,
}

fn finite_or_null<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mapped: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
    mapped.serialize(s)
}

fn null_as_neg_inf<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let raw = Vec::<Option<f64>>::deserialize(d)?;
    Ok(raw.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
}

impl TestResult {
    pub fn tau(&self) -> CandidateTau {
        CandidateTau::from_profile_index(self.tau_hat as usize - 1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// `(1 + #{s >= s_obs}) / (K + 1)`; ties count against rejection.
pub fn rank_p_value(s_obs: f64, resampled: &[f64]) -> f64 {
    let ge = resampled.iter().filter(|&&s| s >= s_obs).count();
    (1 + ge) as f64 / (resampled.len() + 1) as f64
}

/// Runs the test. Resample `k` (1-based) draws its labels from stream
/// `(seed, k)`, so the result does not depend on scheduling.
pub fn run_crt(ds: &LabeledDataset, rx: &TimeLabelModel, stat: &dyn Statistic, opts: &CrtOptions) -> Result<TestResult, CrtError> {
    if opts.k == 0 {
        return Err(CrtError::InvalidOptions("k must be positive".into()));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(CrtError::InvalidOptions("alpha must lie in (0, 1)".into()));
    }
    if rx.t_max() != ds.t_max() {
        return Err(CrtError::InvalidOptions(format!(
            "label model has T = {}, data has T = {}",
            rx.t_max(),
            ds.t_max()
        )));
    }
    let start = Instant::now();
    let sampler = rx.sampler(ds.x())?;
    let observed = match stat.evaluate(ds, ds.r()) {
        StatOutcome::Value(e) => e,
        StatOutcome::Skip => return Err(CrtError::ObservedSkipped),
    };
    let outcomes: Vec<Option<f64>> = (1..=opts.k as u64)
        .into_par_iter()
        .map(|k| {
            let labels = sampler.sample(&mut substream(opts.seed, k));
            match stat.evaluate(ds, &labels) {
                StatOutcome::Value(e) => Some(e.statistic),
                StatOutcome::Skip => None,
            }
        })
        .collect();
    let skipped = outcomes.iter().filter(|o| o.is_none()).count();
    if skipped as f64 > MAX_SKIP_FRACTION * opts.k as f64 {
        return Err(CrtError::TooManySkips { skipped, k: opts.k });
    }
    let resampled: Vec<f64> = outcomes.into_iter().flatten().collect();
    let p_value = rank_p_value(observed.statistic, &resampled);
    Ok(TestResult {
        schema_version: SCHEMA_VERSION,
        method: stat.name().to_string(),
        s_obs: observed.statistic,
        p_value,
        tau_hat: observed.tau_hat.get(),
        profile: observed.profile,
        k: opts.k,
        k_effective: resampled.len(),
        seed: opts.seed,
        alpha: opts.alpha,
        reject: p_value <= opts.alpha,
        s_resampled: resampled,
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

/// Smallest `tau` attaining the maximum of the observed divergence profile.
pub fn localize(result: &TestResult) -> CandidateTau {
    Evaluation::from_profile(result.profile.clone()).map_or_else(|| result.tau(), |e| e.tau_hat)
}
