use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gen_pseudo, generate, Preset, Scenario, ScenarioConfig, SimError};
use crate::crt::{localize, run_crt, Statistic, TestResult, SCHEMA_VERSION};
use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::lmm::{fit_lmm, LmmError, MixtureFit};
use crate::pipeline::{detect, detect_cusum, detect_with, DetectOptions, PipelineError};
use crate::rng::{derive_seed, substream};
use crate::rx_model::TimeLabelModel;
use crate::statistics::Method;

/// Which replications count towards localization accuracy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalizationBasis {
    #[default]
    All,
    RejectedOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExperimentOptions {
    /// Test options; the test seed is replaced per replication.
    pub detect: DetectOptions,
    pub localization: LocalizationBasis,
}

/// A statistic under study: a named method or a caller-supplied builder.
#[derive(Clone, Copy)]
pub enum Contender<'a> {
    Method(Method),
    Custom {
        name: &'a str,
        build: &'a (dyn Fn(&LabeledDataset) -> Box<dyn Statistic> + Sync),
    },
}

impl Contender<'_> {
    fn name(&self) -> String {
        match self {
            Contender::Method(m) => m.to_string(),
            Contender::Custom { name, .. } => name.to_string(),
        }
    }

    fn uses_crt(&self) -> bool {
        match self {
            Contender::Method(m) => m.uses_crt(),
            Contender::Custom { .. } => true,
        }
    }

    fn uses_mixture(&self) -> bool {
        matches!(self, Contender::Method(m) if m.uses_mixture())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub rep: usize,
    /// Seed of the replication; data and test seeds derive from it.
    pub seed: u64,
    pub p_value: f64,
    pub s_obs: f64,
    /// `None` when the test was abandoned.
    pub tau_hat: Option<u32>,
    pub reject: bool,
    pub k_effective: usize,
    pub runtime_ms: u64,
    pub error: Option<String>,
}

impl ReplicationSummary {
    fn from_result(rep: usize, seed: u64, res: &TestResult, runtime_ms: u64) -> Self {
        Self {
            rep,
            seed,
            p_value: res.p_value,
            s_obs: res.s_obs,
            tau_hat: Some(localize(res).get()),
            reject: res.reject,
            k_effective: res.k_effective,
            runtime_ms,
            error: None,
        }
    }

    /// A test that could not be carried out counts as a non-rejection.
    fn aborted(rep: usize, seed: u64, err: &PipelineError, runtime_ms: u64) -> Self {
        Self {
            rep,
            seed,
            p_value: 1.0,
            s_obs: f64::NAN,
            tau_hat: None,
            reject: false,
            k_effective: 0,
            runtime_ms,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub method: String,
    pub replications: usize,
    pub k: usize,
    pub alpha: f64,
    pub rejection_rate: f64,
    pub localization_accuracy: f64,
    pub localization_basis: LocalizationBasis,
    pub aborted: usize,
    pub mean_runtime_ms: f64,
    pub per_replication: Vec<ReplicationSummary>,
}

/// One CSV line per replication.
#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    method: &'a str,
    delta: f64,
    rep: usize,
    seed: u64,
    p_value: f64,
    s_obs: f64,
    tau_hat: Option<u32>,
    reject: bool,
    k_effective: usize,
    runtime_ms: u64,
    error: Option<&'a str>,
}

impl ExperimentReport {
    fn summarize(cfg: &ScenarioConfig, method: String, opts: &ExperimentOptions, per: Vec<ReplicationSummary>) -> Self {
        let reps = per.len();
        let rejected = per.iter().filter(|s| s.reject).count();
        let hit = |s: &&ReplicationSummary| s.tau_hat == Some(cfg.tau_true);
        let localization_accuracy = match opts.localization {
            LocalizationBasis::All => per.iter().filter(hit).count() as f64 / reps as f64,
            LocalizationBasis::RejectedOnly if rejected == 0 => 0.0,
            LocalizationBasis::RejectedOnly => per.iter().filter(|s| s.reject).filter(hit).count() as f64 / rejected as f64,
        };
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: *cfg,
            method,
            replications: reps,
            k: opts.detect.crt.k,
            alpha: opts.detect.crt.alpha,
            rejection_rate: rejected as f64 / reps as f64,
            localization_accuracy,
            localization_basis: opts.localization,
            aborted: per.iter().filter(|s| s.error.is_some()).count(),
            mean_runtime_ms: per.iter().map(|s| s.runtime_ms as f64).sum::<f64>() / reps as f64,
            per_replication: per,
        }
    }

    /// Monte Carlo standard error of the rejection rate.
    pub fn rejection_se(&self) -> f64 {
        let r = self.rejection_rate;
        (r * (1.0 - r) / self.replications as f64).sqrt()
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        out.mean_runtime_ms = 0.0;
        for s in &mut out.per_replication {
            s.runtime_ms = 0;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)?;
        let scenario = self.scenario.scenario.as_str();
        for s in &self.per_replication {
            w.serialize(CsvRow {
                scenario,
                method: &self.method,
                delta: self.scenario.delta,
                rep: s.rep,
                seed: s.seed,
                p_value: s.p_value,
                s_obs: s.s_obs,
                tau_hat: s.tau_hat,
                reject: s.reject,
                k_effective: s.k_effective,
                runtime_ms: s.runtime_ms,
                error: s.error.as_deref(),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Draws the labeled sample, and optionally extra unlabeled covariates, of
/// one replication from its data seed.
type Draw<'a> = dyn Fn(u64) -> Result<(LabeledDataset, Option<UnlabeledDataset>), SimError> + Sync + 'a;

/// One replication for every contender, sharing the data, the label model
/// and the mixture fit. Each contender is charged the time of the shared
/// pieces it uses.
fn replicate(draw: &Draw, seed: u64, rep: usize, contenders: &[Contender], opts: &ExperimentOptions) -> Result<Vec<ReplicationSummary>, SimError> {
    let rep_seed = derive_seed(seed, rep as u64);
    let (ds, unlabeled) = draw(derive_seed(rep_seed, 0))?;
    let mut dopts = opts.detect;
    dopts.crt.seed = derive_seed(rep_seed, 1);

    let start = Instant::now();
    let rx = if contenders.iter().any(Contender::uses_crt) {
        Some(TimeLabelModel::learn(&ds, unlabeled.as_ref(), dopts.rx_ridge).map_err(PipelineError::from)?)
    } else {
        None
    };
    let rx_ms = elapsed_ms(start);
    let start = Instant::now();
    let mixture: Option<Result<MixtureFit, LmmError>> =
        contenders.iter().any(Contender::uses_mixture).then(|| fit_lmm(&ds, &dopts.em, dopts.em_seed()));
    let em_ms = elapsed_ms(start);

    contenders
        .iter()
        .map(|c| {
            let start = Instant::now();
            let outcome: Result<TestResult, PipelineError> = match c {
                Contender::Method(m) => {
                    let fit = match (&mixture, m.uses_mixture()) {
                        (Some(Err(e)), true) => Err(PipelineError::from(e.clone())),
                        (Some(Ok(f)), true) => Ok(Some(f)),
                        _ => Ok(None),
                    };
                    fit.and_then(|fit| match rx.as_ref() {
                        Some(rx) => detect_with(&ds, rx, fit, *m, &dopts),
                        None => detect_cusum(&ds, &dopts),
                    })
                }
                Contender::Custom { build, .. } => {
                    let stat = build(&ds);
                    run_crt(&ds, rx.as_ref().expect("label model learned"), stat.as_ref(), &dopts.crt).map_err(PipelineError::from)
                }
            };
            let mut ms = elapsed_ms(start);
            if c.uses_crt() {
                ms += rx_ms;
            }
            if c.uses_mixture() {
                ms += em_ms;
            }
            match outcome {
                Ok(res) => Ok(ReplicationSummary::from_result(rep, rep_seed, &res, ms)),
                Err(e) if e.is_statistical_abort() => Ok(ReplicationSummary::aborted(rep, rep_seed, &e, ms)),
                Err(e) => Err(SimError::from(e)),
            }
        })
        .collect()
}

/// Runs `reps` replications of `cfg` for every contender. Replication `j`
/// draws everything from seeds derived from `(cfg.seed, j)`, so reports do
/// not depend on the worker count.
pub fn run_contenders(
    cfg: &ScenarioConfig,
    contenders: &[Contender],
    reps: usize,
    opts: &ExperimentOptions,
) -> Result<Vec<ExperimentReport>, SimError> {
    cfg.validate()?;
    let draw = |seed| generate(&ScenarioConfig { seed, ..*cfg }).map(|(ds, u)| (ds, Some(u)));
    run_draws(cfg, &draw, contenders, reps, opts)
}

fn run_draws(
    cfg: &ScenarioConfig,
    draw: &Draw,
    contenders: &[Contender],
    reps: usize,
    opts: &ExperimentOptions,
) -> Result<Vec<ExperimentReport>, SimError> {
    if reps == 0 {
        return Err(SimError::InvalidConfig("reps must be positive".into()));
    }
    if contenders.is_empty() {
        return Err(SimError::InvalidConfig("no method given".into()));
    }
    let rows: Vec<Vec<ReplicationSummary>> = (0..reps)
        .into_par_iter()
        .map(|j| replicate(draw, cfg.seed, j, contenders, opts))
        .collect::<Result<_, _>>()?;
    Ok(contenders
        .iter()
        .enumerate()
        .map(|(c, contender)| {
            let per = rows.iter().map(|r| r[c].clone()).collect();
            ExperimentReport::summarize(cfg, contender.name(), opts, per)
        })
        .collect())
}

/// Pseudo-simulation on fixed covariates: every replication redraws
/// bernoulli outcomes from one logistic model `eta` (intercept first), so
/// there is no change point. The label model also learns from `unlabeled`
/// when given. The report's scenario records the covariate layout; its
/// `tau_true` is 1 and localization has no target.
pub fn run_pseudo(
    covariates: &UnlabeledDataset,
    unlabeled: Option<&UnlabeledDataset>,
    eta: &[f64],
    contenders: &[Contender],
    reps: usize,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<Vec<ExperimentReport>, SimError> {
    if let Some(u) = unlabeled {
        if u.p() != covariates.p() {
            return Err(SimError::InvalidConfig(format!(
                "unlabeled covariates have {} columns, expected {}",
                u.p(),
                covariates.p()
            )));
        }
    }
    let t_max = covariates.max_label();
    let cfg = ScenarioConfig {
        scenario: Scenario::Pseudo,
        t_max,
        tau_true: 1,
        n_per_t: covariates.m() / t_max as usize,
        unlabeled_extra: unlabeled.map_or(0, UnlabeledDataset::m),
        p: covariates.p(),
        delta: 0.0,
        seed,
    };
    if t_max < 2 {
        return Err(SimError::InvalidConfig("covariates need at least two time labels".into()));
    }
    let draw = |seed| {
        let ds = gen_pseudo(covariates.x(), covariates.r().to_vec(), eta, &mut substream(seed, 0))?
            .with_feature_names(covariates.feature_names().to_vec())?;
        Ok((ds, unlabeled.cloned()))
    };
    run_draws(&cfg, &draw, contenders, reps, opts)
}

pub fn run_experiment(cfg: &ScenarioConfig, method: Method, reps: usize, opts: &ExperimentOptions) -> Result<ExperimentReport, SimError> {
    Ok(run_contenders(cfg, &[Contender::Method(method)], reps, opts)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeReport {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub k: usize,
    pub workers: usize,
    pub mend_ms: f64,
    pub lad_mean_ms: f64,
    pub speedup: f64,
    pub mend_p_value: f64,
    pub lad_mean_p_value: f64,
}

/// Times the full refit statistic against the mean-distilled statistic on
/// one dataset, each including its own label-model and mixture fits.
pub fn compare_runtime(cfg: &ScenarioConfig, opts: &DetectOptions) -> Result<RuntimeReport, SimError> {
    cfg.validate()?;
    let (ds, unlabeled) = generate(cfg)?;
    let time = |m: Method| -> Result<(f64, f64), SimError> {
        let start = Instant::now();
        let res = detect(&ds, Some(&unlabeled), m, opts)?;
        Ok((start.elapsed().as_secs_f64() * 1e3, res.p_value))
    };
    let (lad_mean_ms, lad_mean_p_value) = time(Method::LadMean)?;
    let (mend_ms, mend_p_value) = time(Method::Mend)?;
    Ok(RuntimeReport {
        schema_version: SCHEMA_VERSION,
        scenario: *cfg,
        k: opts.crt.k,
        workers: rayon::current_num_threads(),
        mend_ms,
        lad_mean_ms,
        speedup: mend_ms / lad_mean_ms,
        mend_p_value,
        lad_mean_p_value,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetOutput {
    pub preset: String,
    pub reports: Vec<ExperimentReport>,
    pub runtime: Option<RuntimeReport>,
}

impl PresetOutput {
    pub fn without_timings(&self) -> Self {
        Self {
            preset: self.preset.clone(),
            reports: self.reports.iter().map(ExperimentReport::without_timings).collect(),
            runtime: None,
        }
    }
}

/// Runs every experiment of a preset. `seed` replaces each scenario seed and
/// `reps`, when given, the preset's replication count.
pub fn run_preset(preset: &Preset, reps: Option<usize>, seed: u64, opts: &ExperimentOptions) -> Result<PresetOutput, SimError> {
    let mut opts = *opts;
    opts.detect.crt.k = preset.k;
    if preset.runtime {
        let (cfg, _) = preset.runs[0];
        let cfg = ScenarioConfig { seed, ..cfg };
        return Ok(PresetOutput {
            preset: preset.name.to_string(),
            reports: Vec::new(),
            runtime: Some(compare_runtime(&cfg, &opts.detect)?),
        });
    }
    let reps = reps.unwrap_or(preset.reps);
    let mut reports = Vec::new();
    for (cfg, methods) in &preset.runs {
        let cfg = ScenarioConfig { seed, ..*cfg };
        let contenders: Vec<Contender> = methods.iter().map(|m| Contender::Method(*m)).collect();
        reports.extend(run_contenders(&cfg, &contenders, reps, &opts)?);
    }
    Ok(PresetOutput {
        preset: preset.name.to_string(),
        reports,
        runtime: None,
    })
}
