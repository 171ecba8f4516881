//! Model-X conditional randomization tests for detecting and localizing a
//! change point in the conditional law of an outcome given covariates.
//!
//! The crate is organized bottom-up:
//!
//! - [`dataset`]: labeled / unlabeled samples indexed by discrete time labels.
//! - [`glm`]: lasso, ridge, logistic and multinomial fitters.
//! - [`rx_model`]: the time-label model `p(R | X)` and counterfeit label draws.
//! - [`lmm`]: two-regime latent mixture fitted by EM with the labels masked,
//!   and the distilled representations built from it.
//! - [`crt`]: the generic randomization engine and rank p-value.
//! - [`statistics`]: the refit statistic, the two distilled statistics and an
//!   OLS-CUSUM baseline.
//! - [`pipeline`]: end-to-end detection on one dataset.
//! - [`simlab`]: scenario generators and replicated experiments.

pub mod crt;
pub mod dataset;
pub mod glm;
pub mod lmm;
pub mod pipeline;
pub mod rng;
pub mod rx_model;
pub mod simlab;
pub mod statistics;

pub use crt::{localize, run_crt, CrtError, CrtOptions, Evaluation, StatOutcome, Statistic, TestResult};
pub use dataset::{CandidateTau, DataError, Family, LabeledDataset, UnlabeledDataset};
pub use glm::{FitError, LinearFit, MultinomialFit};
pub use lmm::{Distillation, DistillKind, EmOptions, LmmError, MixtureFit};
pub use pipeline::{detect, DetectOptions, PipelineError};
pub use rx_model::TimeLabelModel;
pub use statistics::Method;
