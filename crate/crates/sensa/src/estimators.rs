//! Point estimates and classical standard errors for the three
//! identification strategies.
//!
//! All three estimators run on [`ReducedData`], i.e. after covariates have
//! been partialled out, and use the same degrees-of-freedom convention
//! `dof = n - p_x - 3`: the covariate design consumed `p_x` columns upstream
//! and each strategy effectively spends three more on (treatment, treatment
//! proxy, outcome proxy).
//!
//! - selection-on-observables: outcome regressed on treatment and both
//!   proxies, reading off the treatment coefficient;
//! - instrumental: two-stage least squares using the treatment proxy as the
//!   instrument with the outcome proxy as an included control;
//! - proximal: two-stage regression through the predicted outcome proxy.
//!
//! The two-stage standard errors use structural residuals (built from the
//! original, not fitted, columns) over the inverse second-stage normal
//! matrix, the classical 2SLS construction.
//!
//! Each estimator also has a moment-space twin that evaluates the same
//! functional on a covariance matrix instead of data columns. Those twins
//! power the population oracles and everything in the sensitivity machinery
//! that works with reweighted or synthetic moments.

use crate::error::{Error, Result};
use crate::ingest::ReducedData;
use crate::linalg::{self, SymMatrix};
use crate::var;
use crate::Strategy;
use serde::Serialize;
use std::fmt;

/// Point estimate with its classical standard error.
#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub strategy: Strategy,
    /// Effect of treatment on outcome, in the (possibly standardized) units
    /// of the ingested columns.
    pub tau: f64,
    pub se: f64,
    pub n: usize,
    pub dof: usize,
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:.4} ({:.4})", self.strategy, self.tau, self.se)
    }
}

/// The three estimates on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct Estimates {
    pub soo: Estimate,
    pub iv: Estimate,
    pub prox: Estimate,
}

impl Estimates {
    pub fn get(&self, strategy: Strategy) -> &Estimate {
        match strategy {
            Strategy::Soo => &self.soo,
            Strategy::Iv => &self.iv,
            Strategy::Prox => &self.prox,
        }
    }

    pub fn taus(&self) -> TauSet {
        TauSet {
            soo: self.soo.tau,
            iv: self.iv.tau,
            prox: self.prox.tau,
        }
    }
}

/// Just the three point values, the minimal input for bias arithmetic.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TauSet {
    pub soo: f64,
    pub iv: f64,
    pub prox: f64,
}

impl TauSet {
    pub fn get(&self, strategy: Strategy) -> f64 {
        match strategy {
            Strategy::Soo => self.soo,
            Strategy::Iv => self.iv,
            Strategy::Prox => self.prox,
        }
    }
}

/// Instrument-relevance floor: |R| of treatment on treatment proxy given the
/// outcome proxy must exceed this for the instrumental estimator to run.
pub const RELEVANCE_TOL: f64 = 1e-6;

/// Proxy-degeneracy floor: the predicted outcome proxy must keep at least
/// this fraction of its variance after projecting out the treatment.
pub const PROXY_VARIANCE_TOL: f64 = 1e-10;

fn estimator_dof(r: &ReducedData) -> Result<usize> {
    if r.n <= r.p_x + 3 {
        return Err(Error::Dimension(format!(
            "{} rows cannot support {} partialled columns plus three regressors",
            r.n, r.p_x
        )));
    }
    Ok(r.n - r.p_x - 3)
}

/// Selection-on-observables estimate: outcome on (treatment, both proxies).
pub fn estimate_soo(r: &ReducedData) -> Result<Estimate> {
    let dof = estimator_dof(r)?;
    let design: [(&str, &[f64]); 3] = [("z", &r.z), ("w_z", &r.w_z), ("w_y", &r.w_y)];
    let fit = linalg::wls(&design, &r.y, &r.weights, r.p_x)?;
    Ok(Estimate {
        strategy: Strategy::Soo,
        tau: fit.coef[0],
        se: fit.coef_cov[0][0].max(0.0).sqrt(),
        n: r.n,
        dof,
    })
}

/// Instrumental estimate: two-stage least squares with the treatment proxy
/// as instrument and the outcome proxy included in both stages.
pub fn estimate_iv(r: &ReducedData) -> Result<Estimate> {
    let dof = estimator_dof(r)?;
    let m = crate::ingest::moments(r)?;
    let relevance = linalg::partial_corr(&m.cov, var::Z, var::W_Z, &[var::W_Y])?;
    if relevance.abs() <= RELEVANCE_TOL {
        return Err(Error::Relevance { r: relevance });
    }

    let first: [(&str, &[f64]); 2] = [("w_z", &r.w_z), ("w_y", &r.w_y)];
    let fs = linalg::wls(&first, &r.z, &r.weights, r.p_x)?;
    let z_hat: Vec<f64> = r
        .w_z
        .iter()
        .zip(&r.w_y)
        .map(|(wz, wy)| fs.coef[0] * wz + fs.coef[1] * wy)
        .collect();

    let second: [(&str, &[f64]); 2] = [("z_hat", &z_hat), ("w_y", &r.w_y)];
    let ss = linalg::wls(&second, &r.y, &r.weights, r.p_x)?;
    let (tau, c_wy) = (ss.coef[0], ss.coef[1]);

    let sigma2 = structural_sigma2(r, |i| r.y[i] - tau * r.z[i] - c_wy * r.w_y[i], dof);
    let inv = linalg::xtwx_inverse(&second, &r.weights)?;
    Ok(Estimate {
        strategy: Strategy::Iv,
        tau,
        se: (sigma2 * inv[0][0]).max(0.0).sqrt(),
        n: r.n,
        dof,
    })
}

/// Proximal estimate: regress the outcome proxy on (treatment, treatment
/// proxy), then the outcome on (treatment, predicted outcome proxy).
pub fn estimate_prox(r: &ReducedData) -> Result<Estimate> {
    let dof = estimator_dof(r)?;
    let first: [(&str, &[f64]); 2] = [("z", &r.z), ("w_z", &r.w_z)];
    let fs = linalg::wls(&first, &r.w_y, &r.weights, r.p_x)?;
    let wy_hat: Vec<f64> = r
        .z
        .iter()
        .zip(&r.w_z)
        .map(|(z, wz)| fs.coef[0] * z + fs.coef[1] * wz)
        .collect();

    let n = r.n as f64;
    let wmoment = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(&r.weights)
            .map(|((x, y), w)| w * x * y)
            .sum::<f64>()
            / n
    };
    let var_hat = wmoment(&wy_hat, &wy_hat);
    let var_z = wmoment(&r.z, &r.z);
    let resid_hat = var_hat - wmoment(&wy_hat, &r.z).powi(2) / var_z;
    if resid_hat <= PROXY_VARIANCE_TOL * var_hat {
        return Err(Error::ProxyDegeneracy(format!(
            "predicted outcome proxy is collinear with treatment (residual variance {resid_hat:.3e} of {var_hat:.3e})"
        )));
    }

    let second: [(&str, &[f64]); 2] = [("z", &r.z), ("wy_hat", &wy_hat)];
    let ss = linalg::wls(&second, &r.y, &r.weights, r.p_x)?;
    let (tau, c_hat) = (ss.coef[0], ss.coef[1]);

    let sigma2 = structural_sigma2(r, |i| r.y[i] - tau * r.z[i] - c_hat * r.w_y[i], dof);
    let inv = linalg::xtwx_inverse(&second, &r.weights)?;
    Ok(Estimate {
        strategy: Strategy::Prox,
        tau,
        se: (sigma2 * inv[0][0]).max(0.0).sqrt(),
        n: r.n,
        dof,
    })
}

fn structural_sigma2(r: &ReducedData, resid: impl Fn(usize) -> f64, dof: usize) -> f64 {
    let ssr: f64 = (0..r.n)
        .map(|i| {
            let e = resid(i);
            r.weights[i] * e * e
        })
        .sum();
    (ssr / dof as f64).max(0.0)
}

/// All three estimates on one reduction.
pub fn estimate_all(r: &ReducedData) -> Result<Estimates> {
    Ok(Estimates {
        soo: estimate_soo(r)?,
        iv: estimate_iv(r)?,
        prox: estimate_prox(r)?,
    })
}

/// Moment-space selection-on-observables estimate: coefficient on the
/// treatment in the population regression of the outcome on (treatment,
/// both proxies). The matrix may have extra trailing variables; only the
/// leading observed block is used.
pub fn tau_soo_from_moments(m: &SymMatrix) -> Result<f64> {
    let coefs = linalg::reg_coefs(m, var::Y, &[var::Z, var::W_Z, var::W_Y])?;
    Ok(coefs[0])
}

/// Moment-space instrumental estimate: the single-instrument 2SLS ratio
/// cov(Y, W_Z | outcome proxy partialled) over cov(Z, W_Z | likewise).
pub fn tau_iv_from_moments(m: &SymMatrix) -> Result<f64> {
    let relevance = linalg::partial_corr(m, var::Z, var::W_Z, &[var::W_Y])?;
    if relevance.abs() <= RELEVANCE_TOL {
        return Err(Error::Relevance { r: relevance });
    }
    let rc = linalg::resid_cov(m, &[var::Y, var::Z, var::W_Z], &[var::W_Y])?;
    Ok(rc.get(0, 2) / rc.get(1, 2))
}

/// Moment-space proximal estimate: coefficient on the treatment in the
/// population regression of the outcome on (treatment, predicted outcome
/// proxy), the projection being onto (treatment, treatment proxy).
pub fn tau_prox_from_moments(m: &SymMatrix) -> Result<f64> {
    let m6 = m.append_projection(var::W_Y, &[var::Z, var::W_Z], "wy_hat")?;
    let hat = m6.dim() - 1;
    let var_hat = m6.get(hat, hat);
    let resid_hat = linalg::resid_var(&m6, hat, &[var::Z])?;
    if resid_hat <= PROXY_VARIANCE_TOL * var_hat {
        return Err(Error::ProxyDegeneracy(format!(
            "predicted outcome proxy is collinear with treatment (residual variance {resid_hat:.3e} of {var_hat:.3e})"
        )));
    }
    let coefs = linalg::reg_coefs(&m6, var::Y, &[var::Z, hat])?;
    Ok(coefs[0])
}

/// All three moment-space estimates.
pub fn taus_from_moments(m: &SymMatrix) -> Result<TauSet> {
    Ok(TauSet {
        soo: tau_soo_from_moments(m)?,
        iv: tau_iv_from_moments(m)?,
        prox: tau_prox_from_moments(m)?,
    })
}
