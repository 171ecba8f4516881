//! End-to-end detection on one dataset: learn the label model, fit the
//! mixture when a distilled statistic is requested, and run the test.

use std::time::Instant;

use thiserror::Error;

use crate::crt::{run_crt, CrtError, CrtOptions, Statistic, TestResult, SCHEMA_VERSION};
use crate::dataset::{DataError, LabeledDataset, UnlabeledDataset};
use crate::glm::FitError;
use crate::lmm::{distill_mean, distill_repr, fit_lmm, EmOptions, LmmError, MixtureFit};
use crate::rng::derive_seed;
use crate::rx_model::{RxError, TimeLabelModel, DEFAULT_RX_RIDGE};
use crate::statistics::{
    ols_cusum, LadMeanConfig, LadMeanStatistic, LadReprConfig, LadReprStatistic, MendConfig, MendStatistic, Method, StatError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Rx(#[from] RxError),
    #[error(transparent)]
    Lmm(#[from] LmmError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Crt(#[from] CrtError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

impl PipelineError {
    /// Errors that reflect the data at hand rather than bad input or options:
    /// the test could not be carried out.
    pub fn is_statistical_abort(&self) -> bool {
        matches!(
            self,
            PipelineError::Crt(CrtError::TooManySkips { .. } | CrtError::ObservedSkipped) | PipelineError::Lmm(LmmError::AllRestartsDegenerate)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectOptions {
    pub crt: CrtOptions,
    pub rx_ridge: f64,
    pub em: EmOptions,
    /// Features kept per mixture component by the representation distillation.
    pub top_k: usize,
    pub lad_mean: LadMeanConfig,
    pub lad_repr: LadReprConfig,
    pub mend: MendConfig,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            crt: CrtOptions::default(),
            rx_ridge: DEFAULT_RX_RIDGE,
            em: EmOptions::default(),
            top_k: 5,
            lad_mean: LadMeanConfig::default(),
            lad_repr: LadReprConfig::default(),
            mend: MendConfig::default(),
        }
    }
}

impl DetectOptions {
    /// Seed of the mixture fit. Stream 0 of the test seed is never used for
    /// label draws, so auxiliary seeds are derived from it.
    pub fn em_seed(&self) -> u64 {
        derive_seed(derive_seed(self.crt.seed, 0), 0)
    }

    pub fn cv_seed(&self) -> u64 {
        derive_seed(derive_seed(self.crt.seed, 0), 1)
    }
}

/// Builds the statistic for `method` with its frozen state. `mixture` must
/// be given for the distilled methods.
pub fn build_statistic(
    method: Method,
    ds: &LabeledDataset,
    mixture: Option<&MixtureFit>,
    opts: &DetectOptions,
) -> Result<Box<dyn Statistic>, PipelineError> {
    let need_mixture = || StatError::InvalidConfig(format!("{method} needs a fitted mixture"));
    Ok(match method {
        Method::Mend => Box::new(MendStatistic::new(MendConfig {
            cv_seed: opts.cv_seed(),
            ..opts.mend
        })?),
        Method::LadMean => {
            let fit = mixture.ok_or_else(need_mixture)?;
            Box::new(LadMeanStatistic::new(&distill_mean(fit, ds), ds, opts.lad_mean)?)
        }
        Method::LadRepr => {
            let fit = mixture.ok_or_else(need_mixture)?;
            Box::new(LadReprStatistic::new(&distill_repr(fit, ds, opts.top_k)?, ds, opts.lad_repr)?)
        }
        Method::OlsCusum => Box::new(crate::statistics::OlsCusum::new(ds)?),
    })
}

/// Runs `method` given an already learned label model and, for the
/// distilled methods, an already fitted mixture.
pub fn detect_with(
    ds: &LabeledDataset,
    rx: &TimeLabelModel,
    mixture: Option<&MixtureFit>,
    method: Method,
    opts: &DetectOptions,
) -> Result<TestResult, PipelineError> {
    if method == Method::OlsCusum {
        return detect_cusum(ds, opts);
    }
    let stat = build_statistic(method, ds, mixture, opts)?;
    Ok(run_crt(ds, rx, stat.as_ref(), &opts.crt)?)
}

/// Full detection: label model from labeled plus unlabeled covariates,
/// mixture fit for the distilled methods, then the randomization test.
/// The baseline CUSUM method uses its asymptotic p-value instead.
pub fn detect(
    ds: &LabeledDataset,
    unlabeled: Option<&UnlabeledDataset>,
    method: Method,
    opts: &DetectOptions,
) -> Result<TestResult, PipelineError> {
    if method == Method::OlsCusum {
        return detect_cusum(ds, opts);
    }
    let start = Instant::now();
    let rx = TimeLabelModel::learn(ds, unlabeled, opts.rx_ridge)?;
    let mixture = if method.uses_mixture() { Some(fit_lmm(ds, &opts.em, opts.em_seed())?) } else { None };
    let mut result = detect_with(ds, &rx, mixture.as_ref(), method, opts)?;
    result.runtime_ms = start.elapsed().as_millis() as u64;
    Ok(result)
}

/// The CUSUM baseline as a test result, with its asymptotic p-value and no
/// resamples.
pub fn detect_cusum(ds: &LabeledDataset, opts: &DetectOptions) -> Result<TestResult, PipelineError> {
    let start = Instant::now();
    let res = ols_cusum(ds)?;
    Ok(TestResult {
        schema_version: SCHEMA_VERSION,
        method: Method::OlsCusum.to_string(),
        s_obs: res.statistic,
        p_value: res.p_value,
        tau_hat: res.tau_hat,
        profile: res.profile,
        k: 0,
        k_effective: 0,
        seed: opts.crt.seed,
        alpha: opts.crt.alpha,
        reject: res.p_value <= opts.crt.alpha,
        s_resampled: Vec::new(),
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}
