//! Causal-effect estimation and sensitivity analysis under three
//! identification strategies: selection on observables (SOO), instrumental
//! variables (IV), and proximal inference.
//!
//! The library consumes a rectangular dataset with declared variable roles
//! (outcome `Y`, treatment `Z`, treatment proxy / instrument `W_Z`, outcome
//! proxy `W_Y`, optional covariates `X`), reduces it to a 4x4 weighted moment
//! matrix, and builds everything else on top of that sufficient statistic:
//!
//! - [`ingest`]: CSV loading, standardization, covariate partialling, moments;
//! - [`linalg`]: small dense symmetric matrices, Cholesky, partial
//!   correlations, weighted least squares;
//! - [`estimators`]: point estimates and classical standard errors for the
//!   three strategies;
//! - [`bias`]: closed-form bias of each estimator under assumption
//!   violations, plus the exogenous-instrument special cases;
//! - [`sigma`]: the four-parameter partial-correlation description of an
//!   unobserved confounder, the extended covariance it implies, violation
//!   vectors, and the unified bias map;
//! - [`sensitivity`]: total robustness values, minimal-violation points,
//!   robustness allocations, covariate benchmarking, and a
//!   fractional-weighted bootstrap;
//! - [`contour`]: bias/dominance/MSE grids, zero-bias level sets, and CSV /
//!   JSON / SVG emission;
//! - [`sim`]: a seeded synthetic generator with an exact population oracle.
//!
//! Moment computations use the population convention (divisor `n`); the
//! number of partialled-out covariate columns is carried separately and
//! enters only degrees-of-freedom corrections for standard errors.
//!
//! The canonical variable order for every moment matrix is
//! `(W_Z, W_Y, Z, Y)`, with the confounder `U` appended last when present;
//! see [`var`].

pub mod bias;
pub mod contour;
pub mod error;
pub mod estimators;
pub mod ingest;
pub mod linalg;
mod optim;
pub mod sensitivity;
pub mod sigma;
pub mod sim;

pub use error::{Error, Result};

/// Canonical variable indices into moment matrices.
///
/// Every 4x4 observed moment matrix is ordered `(W_Z, W_Y, Z, Y)` and every
/// extended matrix appends the confounder `U` at index 4. The order is fixed:
/// the nested conditioning sets of the sensitivity parameterization are
/// defined against it, and reordering would silently change which partial
/// correlations the four sensitivity parameters denote.
pub mod var {
    /// Treatment proxy / instrument.
    pub const W_Z: usize = 0;
    /// Outcome proxy.
    pub const W_Y: usize = 1;
    /// Treatment.
    pub const Z: usize = 2;
    /// Outcome.
    pub const Y: usize = 3;
    /// Unobserved confounder (extended matrices only).
    pub const U: usize = 4;

    /// Labels for the observed block, in canonical order.
    pub const OBSERVED_LABELS: [&str; 4] = ["w_z", "w_y", "z", "y"];
    /// Labels for the extended matrix, in canonical order.
    pub const EXTENDED_LABELS: [&str; 5] = ["w_z", "w_y", "z", "y", "u"];
}

/// Identification strategy tag used across estimators, violation vectors,
/// robustness values, and contour labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Selection on observables: regress the outcome on treatment and both
    /// proxies, read off the treatment coefficient.
    Soo,
    /// Instrumental variables: two-stage least squares with the treatment
    /// proxy as instrument and the outcome proxy as included control.
    Iv,
    /// Proximal inference: two-stage regression through the predicted
    /// outcome proxy.
    Prox,
}

impl Strategy {
    /// All strategies, in the fixed (soo, iv, prox) order used for tie
    /// breaking and output layout.
    pub const ALL: [Strategy; 3] = [Strategy::Soo, Strategy::Iv, Strategy::Prox];

    /// Lowercase tag, matching the serialized form.
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Soo => "soo",
            Strategy::Iv => "iv",
            Strategy::Prox => "prox",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "soo" => Ok(Strategy::Soo),
            "iv" => Ok(Strategy::Iv),
            "prox" => Ok(Strategy::Prox),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected soo, iv, or prox)"
            ))),
        }
    }
}
