//! Simulation scenarios and replicated experiments.

mod experiment;
mod generate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experiment::{
    compare_runtime, run_contenders, run_experiment, run_preset, run_pseudo, Contender, ExperimentOptions, ExperimentReport, LocalizationBasis,
    PresetOutput, ReplicationSummary, RuntimeReport,
};
pub use generate::{
    balanced_labels, fit_pseudo_eta, gen_pseudo, gen_pseudo_scenario, gen_scenario1, gen_scenario2, gen_scenario3, gen_standin_covariates,
    scenario2_features, ALPHA_STAR, BETA_CHANGE, EFFECTIVE, PSEUDO_ETA, STANDIN_FEATURES,
};

use crate::dataset::{DataError, LabeledDataset, UnlabeledDataset};
use crate::glm::FitError;
use crate::pipeline::PipelineError;
use crate::statistics::Method;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Linear model with a time-invariant quadratic perturbation.
    S1,
    /// Nonlinear model under covariate shift.
    S2,
    /// High-dimensional linear model.
    S3,
    /// Logistic outcomes on stand-in cohort covariates, no change point.
    Pseudo,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::S3 => "s3",
            Scenario::Pseudo => "pseudo",
        }
    }

    /// Covariate dimension of the scenario's standard design.
    pub fn default_p(self) -> usize {
        match self {
            Scenario::S1 => 20,
            Scenario::S2 => 5,
            Scenario::S3 => 100,
            Scenario::Pseudo => STANDIN_FEATURES,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::Pseudo]
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SimError::InvalidConfig(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub t_max: u32,
    pub tau_true: u32,
    pub n_per_t: usize,
    pub unlabeled_extra: usize,
    pub p: usize,
    /// Perturbation strength: the quadratic term in S1, the coefficient
    /// change in S2 and S3. Ignored by the pseudo scenario.
    pub delta: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        let (t_max, n_per_t) = match scenario {
            // Nine months of roughly 1000 visits.
            Scenario::Pseudo => (9, 111),
            _ => (10, 100),
        };
        Self {
            scenario,
            t_max,
            tau_true: 7,
            n_per_t,
            unlabeled_extra: 1000,
            p: scenario.default_p(),
            delta: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.t_max < 2 {
            return bad(format!("t_max must be at least 2, got {}", self.t_max));
        }
        if self.tau_true == 0 || self.tau_true >= self.t_max {
            return bad(format!("tau_true must lie in 1..{}, got {}", self.t_max - 1, self.tau_true));
        }
        if self.n_per_t == 0 || self.p == 0 {
            return bad("n_per_t and p must be positive".into());
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite".into());
        }
        let fixed_p = matches!(self.scenario, Scenario::S2 | Scenario::Pseudo);
        if fixed_p && self.p != self.scenario.default_p() {
            return bad(format!("scenario {} has p = {}", self.scenario, self.scenario.default_p()));
        }
        Ok(())
    }

    fn expect(&self, scenario: Scenario) -> Result<(), SimError> {
        if self.scenario != scenario {
            return Err(SimError::InvalidConfig(format!("config is for {}, not {scenario}", self.scenario)));
        }
        self.validate()
    }
}

/// Labeled and unlabeled samples of the configured scenario.
pub fn generate(cfg: &ScenarioConfig) -> Result<(LabeledDataset, UnlabeledDataset), SimError> {
    match cfg.scenario {
        Scenario::S1 => gen_scenario1(cfg),
        Scenario::S2 => gen_scenario2(cfg),
        Scenario::S3 => gen_scenario3(cfg),
        Scenario::Pseudo => gen_pseudo_scenario(cfg),
    }
}

/// A named bundle of experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub runs: Vec<(ScenarioConfig, Vec<Method>)>,
    pub reps: usize,
    pub k: usize,
    /// Time one dataset under the refit and the mean-distilled statistic
    /// instead of running replications.
    pub runtime: bool,
}

pub const PRESET_NAMES: [&str; 10] = [
    "s1-null",
    "s2-null",
    "s2-power",
    "s3-null",
    "s3-power",
    "s3-sweep",
    "pseudo",
    "s3-runtime",
    "paper-s3-runtime",
    "paper-scale",
];

pub fn preset(name: &str) -> Option<Preset> {
    use Method::{LadMean, LadRepr, Mend, OlsCusum};
    let at = |scenario, delta| ScenarioConfig {
        delta,
        ..ScenarioConfig::new(scenario)
    };
    let p = |runs, reps, k| Preset {
        name: PRESET_NAMES.into_iter().find(|n| *n == name).unwrap_or("custom"),
        runs,
        reps,
        k,
        runtime: false,
    };
    Some(match name {
        "s1-null" => p(vec![(at(Scenario::S1, 0.0), vec![LadMean])], 200, 199),
        "s2-null" => p(vec![(at(Scenario::S2, 0.0), vec![LadMean, OlsCusum])], 200, 199),
        "s2-power" => p(vec![(at(Scenario::S2, 3.0), vec![LadMean])], 200, 199),
        "s3-null" => p(vec![(at(Scenario::S3, 0.0), vec![LadMean, LadRepr])], 200, 199),
        "s3-power" => p(vec![(at(Scenario::S3, 3.0), vec![LadMean, LadRepr])], 200, 199),
        "s3-sweep" => p([0.0, 1.0, 3.0, 5.0].map(|d| (at(Scenario::S3, d), vec![LadMean])).to_vec(), 200, 199),
        "pseudo" => p(vec![(at(Scenario::Pseudo, 0.0), vec![LadMean])], 500, 199),
        "s3-runtime" | "paper-s3-runtime" => Preset {
            runtime: true,
            ..p(vec![(at(Scenario::S3, 3.0), vec![Mend, LadMean])], 1, 99)
        },
        "paper-scale" => {
            let mut runs: Vec<_> = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
                .map(|d| (at(Scenario::S1, d), vec![LadMean, LadRepr, OlsCusum]))
                .to_vec();
            runs.extend([0.0, 3.0].map(|d| (at(Scenario::S2, d), vec![LadMean, LadRepr, OlsCusum])));
            runs.extend([0.0, 1.0, 2.0, 3.0, 4.0, 5.0].map(|d| (at(Scenario::S3, d), vec![LadMean, LadRepr, Mend])));
            runs.push((at(Scenario::Pseudo, 0.0), vec![LadMean]));
            p(runs, 500, 199)
        }
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            for (cfg, methods) in &p.runs {
                cfg.validate().unwrap();
                assert!(!methods.is_empty());
            }
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn config_validation() {
        let ok = ScenarioConfig::new(Scenario::S3);
        assert!(ok.validate().is_ok());
        assert!(ScenarioConfig { tau_true: 10, ..ok }.validate().is_err());
        assert!(ScenarioConfig { p: 4, ..ScenarioConfig::new(Scenario::S2) }.validate().is_err());
        assert!(gen_scenario1(&ok).is_err());
        assert_eq!("pseudo".parse::<Scenario>().unwrap(), Scenario::Pseudo);
    }
}
