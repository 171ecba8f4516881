//! Concrete change-point statistics.
//!
//! - [`MendStatistic`]: refit a model on each side of every candidate split
//!   and measure the mean squared divergence of the two fits.
//! - [`LadMeanStatistic`]: contrast the mixing coefficient of two frozen
//!   regime means across the split.
//! - [`LadReprStatistic`]: the refit statistic on a frozen low-dimensional
//!   design.
//! - [`OlsCusum`]: residual CUSUM baseline with an asymptotic p-value.

mod cusum;
mod lad;
mod mend;
mod segment;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use cusum::{kolmogorov_tail, ols_cusum, CusumResult, OlsCusum};
pub use lad::{lad_mixing_coefficient, LadMeanConfig, LadMeanStatistic, LadReprConfig, LadReprStatistic};
pub use mend::{MendConfig, MendFitter, MendStatistic};
pub use segment::ridge_profile;

use crate::glm::FitError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Statistic selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mend,
    LadMean,
    LadRepr,
    OlsCusum,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mend, Method::LadMean, Method::LadRepr, Method::OlsCusum];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mend => "mend",
            Method::LadMean => "mend-lad-mean",
            Method::LadRepr => "mend-lad-repr",
            Method::OlsCusum => "ols-cusum",
        }
    }

    /// Whether the method needs the label model and a randomization test.
    pub fn uses_crt(self) -> bool {
        self != Method::OlsCusum
    }

    /// Whether the method needs the EM mixture fit.
    pub fn uses_mixture(self) -> bool {
        matches!(self, Method::LadMean | Method::LadRepr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = StatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| StatError::InvalidConfig(format!("unknown method '{s}' (expected one of mend, mend-lad-mean, mend-lad-repr, ols-cusum)")))
    }
}

/// Row indices grouped by label, in row order.
pub(crate) fn label_buckets(labels: &[u32], t_max: u32) -> Vec<Vec<usize>> {
    let mut buckets = vec![Vec::new(); t_max as usize];
    for (i, &l) in labels.iter().enumerate() {
        buckets[l as usize - 1].push(i);
    }
    buckets
}
