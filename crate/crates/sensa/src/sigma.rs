//! Extension of an observed covariance matrix by an unobserved confounder.
//!
//! The observed second moments of `(W_Z, W_Y, Z, Y)` pin down everything
//! except how a standardized confounder `U` correlates with them. That
//! freedom is parameterized by four partial correlations, chosen so that
//! every admissible value in `(-1, 1)^4` yields a valid joint covariance:
//!
//! - `r1 = R[U ~ W_Z]`
//! - `r2 = R[U ~ W_Y | W_Z]`
//! - `r3 = R[U ~ Z  | W_Z, W_Y]`
//! - `r4 = R[U ~ Y  | Z, W_Z, W_Y]`
//!
//! The construction telescopes the residual-variance budget through the
//! Cholesky factor of the observed correlation matrix, so positive
//! semidefiniteness holds by construction and the map is exactly invertible:
//! recovering the four partial correlations from the extended matrix returns
//! the inputs. `(r3, r4)` are the two confounding parameters that drive the
//! selection-on-observables bias; `r1` and `r2` only move the proxy-side
//! violation components.
//!
//! `U` is stored with unit variance and appended as the last row of the
//! extended matrix. The observed block is copied verbatim, so its entries
//! are bit-identical to the input.

use crate::error::{Error, Result};
use crate::estimators::TauSet;
use crate::linalg::{self, SymMatrix};
use crate::{var, Strategy};
use serde::{Deserialize, Serialize};

/// Largest admissible magnitude for each confounder correlation parameter.
/// Values beyond this are clamped before the extension is built, keeping the
/// extended matrix numerically positive definite.
pub const RHO_CLAMP: f64 = 0.999;

/// The four confounder correlation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rho {
    /// `R[U ~ W_Z]`.
    pub r1: f64,
    /// `R[U ~ W_Y | W_Z]`.
    pub r2: f64,
    /// `R[U ~ Z | W_Z, W_Y]`.
    pub r3: f64,
    /// `R[U ~ Y | Z, W_Z, W_Y]`.
    pub r4: f64,
}

impl Rho {
    pub fn new(r1: f64, r2: f64, r3: f64, r4: f64) -> Rho {
        Rho { r1, r2, r3, r4 }
    }

    pub fn zero() -> Rho {
        Rho::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.r1, self.r2, self.r3, self.r4]
    }

    pub fn from_array(a: [f64; 4]) -> Rho {
        Rho::new(a[0], a[1], a[2], a[3])
    }

    /// Squared Euclidean norm of the parameter vector.
    pub fn norm_sq(&self) -> f64 {
        self.as_array().iter().map(|r| r * r).sum()
    }

    /// Each component clamped into `[-RHO_CLAMP, RHO_CLAMP]`.
    pub fn clamped(&self) -> Rho {
        let c = |r: f64| r.clamp(-RHO_CLAMP, RHO_CLAMP);
        Rho::new(c(self.r1), c(self.r2), c(self.r3), c(self.r4))
    }

    fn validate_finite(&self) -> Result<()> {
        for (i, r) in self.as_array().iter().enumerate() {
            if !r.is_finite() {
                return Err(Error::Domain {
                    term: format!("rho[{}]", i + 1),
                    value: *r,
                });
            }
        }
        Ok(())
    }
}

fn check_observed(obs: &SymMatrix) -> Result<()> {
    if obs.dim() != 4
        || !obs
            .labels()
            .iter()
            .map(String::as_str)
            .eq(var::OBSERVED_LABELS)
    {
        return Err(Error::Dimension(format!(
            "expected a 4x4 observed matrix labeled {:?}, got {:?}",
            var::OBSERVED_LABELS,
            obs.labels()
        )));
    }
    Ok(())
}

fn check_extended(ext: &SymMatrix) -> Result<()> {
    if ext.dim() != 5
        || !ext
            .labels()
            .iter()
            .map(String::as_str)
            .eq(var::EXTENDED_LABELS)
    {
        return Err(Error::Dimension(format!(
            "expected a 5x5 extended matrix labeled {:?}, got {:?}",
            var::EXTENDED_LABELS,
            ext.labels()
        )));
    }
    Ok(())
}

/// Appends a unit-variance confounder with correlation parameters `rho` to
/// the observed covariance matrix. Parameters are clamped into
/// `[-RHO_CLAMP, RHO_CLAMP]` first; the observed block is copied verbatim.
pub fn extend_covariance(obs: &SymMatrix, rho: &Rho) -> Result<SymMatrix> {
    check_observed(obs)?;
    rho.validate_finite()?;
    let rho = rho.clamped();

    let (corr, sds) = obs.to_correlation()?;
    let l = corr.cholesky_lower()?;

    // Telescoped residual budget: u_k = r_k * sqrt(prod_{m<k} (1 - r_m^2)).
    // Multiplying the running budget keeps it nonnegative even when a
    // parameter sits exactly at the clamp.
    let rs = rho.as_array();
    let mut u = [0.0_f64; 4];
    let mut budget = 1.0_f64;
    for k in 0..4 {
        u[k] = rs[k] * budget.sqrt();
        budget *= 1.0 - rs[k] * rs[k];
    }

    let mut ext = SymMatrix::zeros(&var::EXTENDED_LABELS);
    for i in 0..4 {
        for j in 0..=i {
            ext.set(i, j, obs.get(i, j));
        }
    }
    ext.set(var::U, var::U, 1.0);
    for j in 0..4 {
        let mut cor_uj = 0.0;
        for (k, uk) in u.iter().enumerate().take(j + 1) {
            cor_uj += l.get(j, k) * uk;
        }
        ext.set(var::U, j, cor_uj * sds[j]);
    }
    Ok(ext)
}

/// Recovers the four confounder correlation parameters from an extended
/// covariance matrix. Inverse of [`extend_covariance`] up to floating-point
/// roundoff.
pub fn recover_rho(ext: &SymMatrix) -> Result<Rho> {
    check_extended(ext)?;
    Ok(Rho {
        r1: linalg::partial_corr(ext, var::U, var::W_Z, &[])?,
        r2: linalg::partial_corr(ext, var::U, var::W_Y, &[var::W_Z])?,
        r3: linalg::partial_corr(ext, var::U, var::Z, &[var::W_Z, var::W_Y])?,
        r4: linalg::partial_corr(ext, var::U, var::Y, &[var::Z, var::W_Z, var::W_Y])?,
    })
}

/// The treatment effect implied by an extended covariance matrix: the
/// coefficient on `Z` in the population regression of `Y` on
/// `(Z, W_Z, W_Y, U)`. Once the confounder joins the adjustment set the
/// regression is unconfounded, so this is the estimand every strategy's
/// bias is measured against.
pub fn tau_true(ext: &SymMatrix) -> Result<f64> {
    check_extended(ext)?;
    let coefs = linalg::reg_coefs(ext, var::Y, &[var::Z, var::W_Z, var::W_Y, var::U])?;
    Ok(coefs[0])
}

/// One identification strategy's assumption-violation vector, measured on an
/// extended covariance matrix. Each component is a partial correlation that
/// the strategy's identifying assumptions require to be zero.
#[derive(Debug, Clone, Serialize)]
pub struct ViolationVector {
    pub strategy: Strategy,
    /// Component labels, parallel to `values`.
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
}

impl ViolationVector {
    /// Squared Euclidean norm of the violation vector.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Measures the violation vector of `strategy` on an extended matrix.
///
/// - selection on observables: `confounding_z = R[Z ~ U | W_Z, W_Y]`,
///   `confounding_y = R[Y ~ U | Z, W_Z, W_Y]`;
/// - instrumental variable: `exogeneity = R[W_Z ~ U | W_Y]`,
///   `exclusion = R[Y ~ W_Z | Z, W_Y, U]`;
/// - proximal: `exclusion` (same quantity as the instrumental one),
///   `proxy_z = R[W_Y ~ Z | W_Z, U]`, `proxy_wz = R[W_Y ~ W_Z | U]`.
pub fn violations(ext: &SymMatrix, strategy: Strategy) -> Result<ViolationVector> {
    check_extended(ext)?;
    let pc = |i, j, cond: &[usize]| linalg::partial_corr(ext, i, j, cond);
    let (names, values) = match strategy {
        Strategy::Soo => (
            vec!["confounding_z", "confounding_y"],
            vec![
                pc(var::Z, var::U, &[var::W_Z, var::W_Y])?,
                pc(var::Y, var::U, &[var::Z, var::W_Z, var::W_Y])?,
            ],
        ),
        Strategy::Iv => (
            vec!["exogeneity", "exclusion"],
            vec![
                pc(var::W_Z, var::U, &[var::W_Y])?,
                pc(var::Y, var::W_Z, &[var::Z, var::W_Y, var::U])?,
            ],
        ),
        Strategy::Prox => (
            vec!["exclusion", "proxy_z", "proxy_wz"],
            vec![
                pc(var::Y, var::W_Z, &[var::Z, var::W_Y, var::U])?,
                pc(var::W_Y, var::Z, &[var::W_Z, var::U])?,
                pc(var::W_Y, var::W_Z, &[var::U])?,
            ],
        ),
    };
    Ok(ViolationVector {
        strategy,
        names,
        values,
    })
}

/// Bias of a strategy's estimand under the confounder extension `rho`:
/// the strategy's population estimate on the observed moments minus
/// [`tau_true`] of the extended matrix.
pub fn bias_at(obs: &SymMatrix, taus: &TauSet, rho: &Rho, strategy: Strategy) -> Result<f64> {
    let ext = extend_covariance(obs, rho)?;
    Ok(taus.get(strategy) - tau_true(&ext)?)
}

/// Precomputed scale turning the two confounding parameters `(r3, r4)` into
/// selection-on-observables bias for a fixed observed matrix:
/// `bias = r4 * r3 / sqrt(1 - r3^2) * k`, with
/// `k = sd(Y | Z, W_Z, W_Y) / sd(Z | W_Z, W_Y)`.
///
/// The bias of every strategy depends on `rho` only through this quantity
/// plus the strategy's fixed estimand gap, because `(r1, r2)` move the
/// confounder only inside the span of the proxies, which every estimand
/// already adjusts for. That makes this kernel the fast path for bias
/// evaluation on grids and inside the optimizer, avoiding a full matrix
/// extension per point.
#[derive(Debug, Clone, Copy)]
pub struct SooBiasScale {
    k: f64,
}

impl SooBiasScale {
    pub fn new(obs: &SymMatrix) -> Result<SooBiasScale> {
        check_observed(obs)?;
        let sd_y = linalg::resid_sd(obs, var::Y, &[var::Z, var::W_Z, var::W_Y])?;
        let sd_z = linalg::resid_sd(obs, var::Z, &[var::W_Z, var::W_Y])?;
        Ok(SooBiasScale { k: sd_y / sd_z })
    }

    /// The ratio `sd(Y | Z, W_Z, W_Y) / sd(Z | W_Z, W_Y)`.
    pub fn k(&self) -> f64 {
        self.k
    }

    /// Selection-on-observables bias at confounding parameters
    /// `(r_z, r_y) = (r3, r4)`.
    pub fn bias(&self, r_z: f64, r_y: f64) -> Result<f64> {
        if !(r_z.abs() < 1.0) || !r_y.is_finite() {
            return Err(Error::Domain {
                term: "confounding parameter".into(),
                value: if r_z.abs() < 1.0 { r_y } else { r_z },
            });
        }
        Ok(r_y * r_z / (1.0 - r_z * r_z).sqrt() * self.k)
    }

    /// Largest bias magnitude reachable with both parameters inside the
    /// clamp [`RHO_CLAMP`].
    pub fn max_abs_bias(&self) -> f64 {
        let c = RHO_CLAMP;
        self.k * c * c / (1.0 - c * c).sqrt()
    }
}
