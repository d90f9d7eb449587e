//! Closed-form omitted-confounder bias for each identification strategy.
//!
//! Notation used throughout the field and parameter docs:
//! - `R[A ~ B | C]` is the partial correlation of A and B given the set C;
//! - `R2[A ~ C]` is the R-squared of the population regression of A on C;
//! - `sd(A | C)` is the residual standard deviation of A after projecting
//!   out C;
//! - `U` is the unobserved confounder, `Z` the treatment, `Y` the outcome,
//!   `W_Z` the treatment proxy (doubling as the instrument), `W_Y` the
//!   outcome proxy, and `WY_HAT` the projection of `W_Y` onto `(Z, W_Z)`.
//!
//! Each strategy's bias has two interchangeable forms: a partial-correlation
//! form in terms of sensitivity parameters, and a structural-coefficient
//! form. The two agree identically on linear-Gaussian systems, which the
//! test suite exercises; the proximal partial-correlation form additionally
//! requires that treatment does not depend on the outcome proxy (its
//! derivation eliminates the outcome-proxy equation under that restriction).
//!
//! All formulas are numerically guarded: every `1 - R2` factor that enters a
//! denominator or a square root is required to exceed [`R2_GUARD`], with an
//! explicit domain error below that, rather than silently producing huge
//! values near the boundary of the correlation space.

use crate::error::{Error, Result};
use crate::estimators::RELEVANCE_TOL;
use crate::ingest::{self, ReducedData};
use crate::linalg::{self, SymMatrix};
use crate::var;
use serde::Serialize;

/// Floor on every `1 - R2` factor; smaller values are a domain error.
pub const R2_GUARD: f64 = 1e-12;

/// Computes `1 - r2`, failing when the result drops below [`R2_GUARD`].
fn one_minus(term: &str, r2: f64) -> Result<f64> {
    let v = 1.0 - r2;
    if v < R2_GUARD {
        return Err(Error::Domain {
            term: term.to_string(),
            value: r2,
        });
    }
    Ok(v)
}

fn check_r2(term: &str, r2: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r2) {
        return Err(Error::Domain {
            term: term.to_string(),
            value: r2,
        });
    }
    Ok(())
}

fn check_corr(term: &str, r: f64) -> Result<()> {
    if !(r.abs() < 1.0) {
        return Err(Error::Domain {
            term: term.to_string(),
            value: r,
        });
    }
    Ok(())
}

fn check_sd(term: &str, sd: f64) -> Result<()> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Domain {
            term: term.to_string(),
            value: sd,
        });
    }
    Ok(())
}

fn check_sign(term: &str, s: f64) -> Result<()> {
    if s != 1.0 && s != -1.0 {
        return Err(Error::Domain {
            term: term.to_string(),
            value: s,
        });
    }
    Ok(())
}

/// Sensitivity parameters of the selection-on-observables strategy.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SooParams {
    /// `R[Y ~ U | Z, W_Z, W_Y]`: outcome confounding.
    pub r_yu: f64,
    /// `R[Z ~ U | W_Z, W_Y]`: treatment confounding.
    pub r_zu: f64,
}

impl SooParams {
    /// Extracts both parameters from an extended covariance matrix.
    pub fn from_extended(s: &SymMatrix) -> Result<SooParams> {
        Ok(SooParams {
            r_yu: linalg::partial_corr(s, var::Y, var::U, &[var::Z, var::W_Z, var::W_Y])?,
            r_zu: linalg::partial_corr(s, var::Z, var::U, &[var::W_Z, var::W_Y])?,
        })
    }
}

/// Bias of the selection-on-observables estimator:
/// `r_yu * r_zu / sqrt(1 - r_zu^2) * sd_y_perp / sd_z_perp`,
/// where `sd_y_perp = sd(Y | Z, W_Z, W_Y)` and `sd_z_perp = sd(Z | W_Z, W_Y)`.
pub fn bias_soo(p: &SooParams, sd_y_perp: f64, sd_z_perp: f64) -> Result<f64> {
    if p.r_zu == 1.0 || p.r_zu == -1.0 {
        return Err(Error::Singularity(
            "treatment confounding R[Z ~ U | W_Z, W_Y] is exactly +/-1".into(),
        ));
    }
    check_corr("R[Y ~ U | Z, W_Z, W_Y]", p.r_yu)?;
    check_corr("R[Z ~ U | W_Z, W_Y]", p.r_zu)?;
    check_sd("sd(Y | Z, W_Z, W_Y)", sd_y_perp)?;
    check_sd("sd(Z | W_Z, W_Y)", sd_z_perp)?;
    let denom = one_minus("R2[Z ~ U | W_Z, W_Y]", p.r_zu * p.r_zu)?;
    Ok(p.r_yu * p.r_zu / denom.sqrt() * sd_y_perp / sd_z_perp)
}

/// Bias of the selection-on-observables estimator evaluated directly on an
/// extended covariance matrix.
pub fn bias_soo_from_extended(s: &SymMatrix) -> Result<f64> {
    let p = SooParams::from_extended(s)?;
    let sd_y = linalg::resid_sd(s, var::Y, &[var::Z, var::W_Z, var::W_Y])?;
    let sd_z = linalg::resid_sd(s, var::Z, &[var::W_Z, var::W_Y])?;
    bias_soo(&p, sd_y, sd_z)
}

/// Structural-coefficient form of the selection-on-observables bias:
/// `beta_u * gamma_u * var(U | W_Z, W_Y) / var(Z | W_Z, W_Y)`,
/// where `beta_u` is the confounder's loading in the outcome equation and
/// `gamma_u` its loading in the treatment equation.
pub fn soo_bias_from_coefs(
    beta_u: f64,
    gamma_u: f64,
    var_u_perp: f64,
    var_z_perp: f64,
) -> Result<f64> {
    check_sd("var(U | W_Z, W_Y)", var_u_perp)?;
    check_sd("var(Z | W_Z, W_Y)", var_z_perp)?;
    Ok(beta_u * gamma_u * var_u_perp / var_z_perp)
}

/// Partial-correlation inputs to the instrumental-variable bias formula.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IvBiasInputs {
    /// `R[Z ~ W_Z | W_Y]`: instrument strength.
    pub r_z_wz_g_wy: f64,
    /// `R[Y ~ W_Z | Z, W_Y, U]`: exclusion-restriction violation.
    pub r_y_wz_g_zwyu: f64,
    /// `R[Y ~ U | Z, W_Y]` squared.
    pub r2_y_u_g_zwy: f64,
    /// `R[W_Z ~ U | Z, W_Y]` squared.
    pub r2_wz_u_g_zwy: f64,
    /// `R[Y ~ U | Z, W_Z, W_Y]`: outcome confounding.
    pub r_y_u_g_zwzwy: f64,
    /// `R[W_Z ~ U | W_Y]`: exogeneity violation.
    pub r_wz_u_g_wy: f64,
    /// `R[Z ~ U | W_Z, W_Y]` squared.
    pub r2_z_u_g_wzwy: f64,
    /// `R[Y ~ W_Z | Z, W_Y]` squared.
    pub r2_y_wz_g_zwy: f64,
    /// `sd(Y | Z, W_Y)`.
    pub sd_y_perp: f64,
    /// `sd(Z | W_Y)`.
    pub sd_z_perp: f64,
}

impl IvBiasInputs {
    fn validate(&self) -> Result<()> {
        if self.r_z_wz_g_wy.abs() <= RELEVANCE_TOL {
            return Err(Error::Relevance {
                r: self.r_z_wz_g_wy,
            });
        }
        check_corr("R[Z ~ W_Z | W_Y]", self.r_z_wz_g_wy)?;
        check_corr("R[Y ~ W_Z | Z, W_Y, U]", self.r_y_wz_g_zwyu)?;
        check_corr("R[Y ~ U | Z, W_Z, W_Y]", self.r_y_u_g_zwzwy)?;
        check_corr("R[W_Z ~ U | W_Y]", self.r_wz_u_g_wy)?;
        check_r2("R2[Y ~ U | Z, W_Y]", self.r2_y_u_g_zwy)?;
        check_r2("R2[W_Z ~ U | Z, W_Y]", self.r2_wz_u_g_zwy)?;
        check_r2("R2[Z ~ U | W_Z, W_Y]", self.r2_z_u_g_wzwy)?;
        check_r2("R2[Y ~ W_Z | Z, W_Y]", self.r2_y_wz_g_zwy)?;
        check_sd("sd(Y | Z, W_Y)", self.sd_y_perp)?;
        check_sd("sd(Z | W_Y)", self.sd_z_perp)?;
        Ok(())
    }

    /// Extracts every input from an extended covariance matrix.
    pub fn from_extended(s: &SymMatrix) -> Result<IvBiasInputs> {
        let pc = |i, j, cond: &[usize]| linalg::partial_corr(s, i, j, cond);
        Ok(IvBiasInputs {
            r_z_wz_g_wy: pc(var::Z, var::W_Z, &[var::W_Y])?,
            r_y_wz_g_zwyu: pc(var::Y, var::W_Z, &[var::Z, var::W_Y, var::U])?,
            r2_y_u_g_zwy: pc(var::Y, var::U, &[var::Z, var::W_Y])?.powi(2),
            r2_wz_u_g_zwy: pc(var::W_Z, var::U, &[var::Z, var::W_Y])?.powi(2),
            r_y_u_g_zwzwy: pc(var::Y, var::U, &[var::Z, var::W_Z, var::W_Y])?,
            r_wz_u_g_wy: pc(var::W_Z, var::U, &[var::W_Y])?,
            r2_z_u_g_wzwy: pc(var::Z, var::U, &[var::W_Z, var::W_Y])?.powi(2),
            r2_y_wz_g_zwy: pc(var::Y, var::W_Z, &[var::Z, var::W_Y])?.powi(2),
            sd_y_perp: linalg::resid_sd(s, var::Y, &[var::Z, var::W_Y])?,
            sd_z_perp: linalg::resid_sd(s, var::Z, &[var::W_Y])?,
        })
    }
}

/// Labeled terms of the instrumental-variable bias, as reported by the
/// decomposition output: `total = instrument_strength * sd_ratio *
/// (exclusion + exogeneity)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IvBiasDecomposition {
    /// `1 / R[Z ~ W_Z | W_Y]`.
    pub instrument_strength: f64,
    /// `sd(Y | Z, W_Y) / sd(Z | W_Y)`.
    pub sd_ratio: f64,
    /// Exclusion-restriction violation term.
    pub exclusion: f64,
    /// Exogeneity violation term.
    pub exogeneity: f64,
    pub total: f64,
}

/// Instrumental-variable bias split into its labeled terms.
pub fn iv_bias_terms(inp: &IvBiasInputs) -> Result<IvBiasDecomposition> {
    inp.validate()?;
    let strength2 = inp.r_z_wz_g_wy * inp.r_z_wz_g_wy;
    let exclusion = inp.r_y_wz_g_zwyu
        * (one_minus("R2[Y ~ U | Z, W_Y]", inp.r2_y_u_g_zwy)?
            / (one_minus("R2[W_Z ~ U | Z, W_Y]", inp.r2_wz_u_g_zwy)?
                * one_minus("R2[Z ~ W_Z | W_Y]", strength2)?))
        .sqrt();
    let exogeneity = inp.r_y_u_g_zwzwy
        * inp.r_wz_u_g_wy
        * (one_minus("R2[Y ~ W_Z | Z, W_Y]", inp.r2_y_wz_g_zwy)?
            / (one_minus("R2[Z ~ U | W_Z, W_Y]", inp.r2_z_u_g_wzwy)?
                * one_minus("R2[W_Z ~ U | W_Y]", inp.r_wz_u_g_wy * inp.r_wz_u_g_wy)?))
        .sqrt();
    let instrument_strength = 1.0 / inp.r_z_wz_g_wy;
    let sd_ratio = inp.sd_y_perp / inp.sd_z_perp;
    Ok(IvBiasDecomposition {
        instrument_strength,
        sd_ratio,
        exclusion,
        exogeneity,
        total: instrument_strength * sd_ratio * (exclusion + exogeneity),
    })
}

/// Instrumental-variable bias in partial-correlation form.
pub fn bias_iv(inp: &IvBiasInputs) -> Result<f64> {
    Ok(iv_bias_terms(inp)?.total)
}

/// Instrumental-variable bias evaluated directly on an extended covariance
/// matrix.
pub fn bias_iv_from_extended(s: &SymMatrix) -> Result<f64> {
    bias_iv(&IvBiasInputs::from_extended(s)?)
}

/// Instrumental-variable bias under an exogenous instrument: the exogeneity
/// violation and the instrument-confounder correlation are set to zero and
/// the remaining exclusion product is evaluated. Equals [`bias_iv`] with
/// those inputs zeroed.
pub fn iv_bias_exogenous(inp: &IvBiasInputs) -> Result<f64> {
    let mut reduced = *inp;
    reduced.r_wz_u_g_wy = 0.0;
    reduced.r2_wz_u_g_zwy = 0.0;
    bias_iv(&reduced)
}

/// Structural coefficients entering the coefficient forms of the
/// instrumental and proximal biases.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StructuralCoefBias {
    /// Direct loading of the treatment proxy in the outcome equation.
    pub beta_wz: f64,
    /// Loading of the confounder in the outcome equation.
    pub beta_u: f64,
    /// Regression coefficient of the confounder on the treatment proxy with
    /// the outcome proxy partialled out. This is the reduced-form loading,
    /// not the structural equation coefficient; the two coincide when the
    /// outcome proxy carries no treatment-proxy or confounder component
    /// beyond what the conditioning removes.
    pub phi_u: f64,
    /// Loading of the confounder in the outcome-proxy equation.
    pub alpha_u: f64,
    /// Loading of the treatment proxy in the outcome-proxy equation.
    pub alpha_wz: f64,
}

/// Coefficient form of the instrumental-variable bias:
/// `(1 / R[Z ~ W_Z | W_Y]) * (sd(W_Z | W_Y) / sd(Z | W_Y)) *
/// (beta_wz + beta_u * phi_u)`.
pub fn iv_bias_from_coefs(
    c: &StructuralCoefBias,
    r_z_wz_g_wy: f64,
    sd_wz_perp: f64,
    sd_z_perp: f64,
) -> Result<f64> {
    if r_z_wz_g_wy.abs() <= RELEVANCE_TOL {
        return Err(Error::Relevance { r: r_z_wz_g_wy });
    }
    check_sd("sd(W_Z | W_Y)", sd_wz_perp)?;
    check_sd("sd(Z | W_Y)", sd_z_perp)?;
    Ok((1.0 / r_z_wz_g_wy) * (sd_wz_perp / sd_z_perp) * (c.beta_wz + c.beta_u * c.phi_u))
}

/// Coefficient form of the proximal bias:
/// `s_wz_z * (beta_wz - beta_u * alpha_wz / alpha_u) *
/// sd(W_Z | WY_HAT) / sd(Z | WY_HAT)`.
pub fn prox_bias_from_coefs(
    c: &StructuralCoefBias,
    s_wz_z: f64,
    sd_wz_perp_hat: f64,
    sd_z_perp_hat: f64,
) -> Result<f64> {
    check_sign("s_wz_z", s_wz_z)?;
    if c.alpha_u == 0.0 {
        return Err(Error::Domain {
            term: "alpha_u".into(),
            value: 0.0,
        });
    }
    check_sd("sd(W_Z | WY_HAT)", sd_wz_perp_hat)?;
    check_sd("sd(Z | WY_HAT)", sd_z_perp_hat)?;
    Ok(s_wz_z * (c.beta_wz - c.beta_u * c.alpha_wz / c.alpha_u) * sd_wz_perp_hat / sd_z_perp_hat)
}

/// Partial-correlation inputs to the proximal bias formula.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProxBiasInputs {
    /// Sign of `cov(W_Z | WY_HAT, Z | WY_HAT)`; exactly +/-1.
    pub s_wz_z: f64,
    /// `R2[WY_HAT ~ W_Z]` (squared plain correlation, single regressor).
    pub r2_hat_wy_wz: f64,
    /// `R2[WY_HAT ~ Z]`.
    pub r2_hat_wy_z: f64,
    /// `R[W_Z ~ U | W_Y, Z]` squared.
    pub r2_wz_u_g_wyz: f64,
    /// `sd(Y)` (unconditional).
    pub sd_y: f64,
    /// `sd(Z)` (unconditional).
    pub sd_z: f64,
    /// `R[Y ~ W_Z | W_Y, Z, U]`: exclusion-restriction violation.
    pub r_y_wz_g_wyzu: f64,
    /// `R[Y ~ U | W_Y, Z]` squared.
    pub r2_y_u_g_wyz: f64,
    /// `R2[Y ~ W_Y, Z]`.
    pub r2_y_wyz: f64,
    /// `R2[W_Z ~ W_Y, Z]`.
    pub r2_wz_wyz: f64,
    /// `R[W_Y ~ W_Z | U]`: treatment-proxy leakage into the outcome proxy.
    pub r_wy_wz_g_u: f64,
    /// `R[Y ~ U | W_Z, W_Y, Z]`.
    pub r_y_u_g_wzwyz: f64,
    /// `R2[Y ~ W_Y, W_Z, Z]`.
    pub r2_y_wywzz: f64,
    /// `R[Z ~ U | W_Y]` squared.
    pub r2_z_u_g_wy: f64,
    /// `R2[W_Y ~ U]` (squared plain correlation).
    pub r2_wy_u: f64,
    /// `R2[W_Y ~ W_Z]` (squared plain correlation).
    pub r2_wy_wz: f64,
    /// Sign of `R[W_Y ~ U | W_Z]`; exactly +/-1. The outcome-proxy term
    /// carries this sign so the formula tracks the orientation of the proxy
    /// against the confounder; +1 matches the convention in which the proxy
    /// loads positively on the confounder.
    pub outcome_proxy_sign: f64,
}

impl ProxBiasInputs {
    fn validate(&self) -> Result<()> {
        check_sign("s_wz_z", self.s_wz_z)?;
        check_sign("outcome_proxy_sign", self.outcome_proxy_sign)?;
        check_corr("R[Y ~ W_Z | W_Y, Z, U]", self.r_y_wz_g_wyzu)?;
        check_corr("R[W_Y ~ W_Z | U]", self.r_wy_wz_g_u)?;
        check_corr("R[Y ~ U | W_Z, W_Y, Z]", self.r_y_u_g_wzwyz)?;
        check_r2("R2[WY_HAT ~ W_Z]", self.r2_hat_wy_wz)?;
        check_r2("R2[WY_HAT ~ Z]", self.r2_hat_wy_z)?;
        check_r2("R2[W_Z ~ U | W_Y, Z]", self.r2_wz_u_g_wyz)?;
        check_r2("R2[Y ~ U | W_Y, Z]", self.r2_y_u_g_wyz)?;
        check_r2("R2[Y ~ W_Y, Z]", self.r2_y_wyz)?;
        check_r2("R2[W_Z ~ W_Y, Z]", self.r2_wz_wyz)?;
        check_r2("R2[Y ~ W_Y, W_Z, Z]", self.r2_y_wywzz)?;
        check_r2("R2[Z ~ U | W_Y]", self.r2_z_u_g_wy)?;
        check_r2("R2[W_Y ~ U]", self.r2_wy_u)?;
        check_r2("R2[W_Y ~ W_Z]", self.r2_wy_wz)?;
        check_sd("sd(Y)", self.sd_y)?;
        check_sd("sd(Z)", self.sd_z)?;
        Ok(())
    }

    /// Extracts every input from an extended covariance matrix, deriving
    /// the projection quantities algebraically rather than materializing a
    /// larger system.
    pub fn from_extended(s: &SymMatrix) -> Result<ProxBiasInputs> {
        let m6 = s.append_projection(var::W_Y, &[var::Z, var::W_Z], "wy_hat")?;
        let hat = m6.dim() - 1;
        let pc = |i, j, cond: &[usize]| linalg::partial_corr(s, i, j, cond);
        let hat_resid = linalg::resid_cov(&m6, &[var::W_Z, var::Z], &[hat])?;
        let s_wz_z = if hat_resid.get(0, 1) >= 0.0 { 1.0 } else { -1.0 };
        let wy_u = pc(var::W_Y, var::U, &[var::W_Z])?;
        Ok(ProxBiasInputs {
            s_wz_z,
            r2_hat_wy_wz: linalg::partial_corr(&m6, hat, var::W_Z, &[])?.powi(2),
            r2_hat_wy_z: linalg::partial_corr(&m6, hat, var::Z, &[])?.powi(2),
            r2_wz_u_g_wyz: pc(var::W_Z, var::U, &[var::W_Y, var::Z])?.powi(2),
            sd_y: s.get(var::Y, var::Y).sqrt(),
            sd_z: s.get(var::Z, var::Z).sqrt(),
            r_y_wz_g_wyzu: pc(var::Y, var::W_Z, &[var::W_Y, var::Z, var::U])?,
            r2_y_u_g_wyz: pc(var::Y, var::U, &[var::W_Y, var::Z])?.powi(2),
            r2_y_wyz: linalg::r_squared(s, var::Y, &[var::W_Y, var::Z])?,
            r2_wz_wyz: linalg::r_squared(s, var::W_Z, &[var::W_Y, var::Z])?,
            r_wy_wz_g_u: pc(var::W_Y, var::W_Z, &[var::U])?,
            r_y_u_g_wzwyz: pc(var::Y, var::U, &[var::W_Z, var::W_Y, var::Z])?,
            r2_y_wywzz: linalg::r_squared(s, var::Y, &[var::W_Y, var::W_Z, var::Z])?,
            r2_z_u_g_wy: pc(var::Z, var::U, &[var::W_Y])?.powi(2),
            r2_wy_u: pc(var::W_Y, var::U, &[])?.powi(2),
            r2_wy_wz: pc(var::W_Y, var::W_Z, &[])?.powi(2),
            outcome_proxy_sign: if wy_u >= 0.0 { 1.0 } else { -1.0 },
        })
    }
}

/// Labeled terms of the proximal bias: `total = sign * scaling *
/// (treatment_proxy - outcome_proxy)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProxBiasDecomposition {
    /// `s_wz_z`, the sign carried by the projection geometry.
    pub sign: f64,
    /// Scaling factor including the outcome/treatment sd ratio.
    pub scaling: f64,
    /// Treatment-proxy (exclusion) violation term.
    pub treatment_proxy: f64,
    /// Outcome-proxy violation term.
    pub outcome_proxy: f64,
    pub total: f64,
}

/// Proximal bias split into its labeled terms.
pub fn prox_bias_terms(inp: &ProxBiasInputs) -> Result<ProxBiasDecomposition> {
    inp.validate()?;
    let scaling = (one_minus("R2[WY_HAT ~ W_Z]", inp.r2_hat_wy_wz)?
        / one_minus("R2[WY_HAT ~ Z]", inp.r2_hat_wy_z)?
        / one_minus("R2[W_Z ~ U | W_Y, Z]", inp.r2_wz_u_g_wyz)?)
    .sqrt()
        * (inp.sd_y / inp.sd_z);

    let treatment_proxy = inp.r_y_wz_g_wyzu
        * (one_minus("R2[Y ~ U | W_Y, Z]", inp.r2_y_u_g_wyz)?
            * one_minus("R2[Y ~ W_Y, Z]", inp.r2_y_wyz)?
            / one_minus("R2[W_Z ~ W_Y, Z]", inp.r2_wz_wyz)?)
        .sqrt();

    let r2_wy_wz_g_u = inp.r_wy_wz_g_u * inp.r_wy_wz_g_u;
    let one_minus_wy_u = one_minus("R2[W_Y ~ U]", inp.r2_wy_u)?;
    let denom = r2_wy_wz_g_u * one_minus_wy_u + inp.r2_wy_u - inp.r2_wy_wz;
    if denom <= 0.0 {
        return Err(Error::Domain {
            term: "outcome-proxy denominator".into(),
            value: denom,
        });
    }
    let outcome_proxy = inp.outcome_proxy_sign
        * inp.r_wy_wz_g_u
        * inp.r_y_u_g_wzwyz
        * (one_minus("R2[Y ~ W_Y, W_Z, Z]", inp.r2_y_wywzz)?
            / (one_minus("R2[Z ~ U | W_Y]", inp.r2_z_u_g_wy)? * one_minus_wy_u)
            * one_minus_wy_u
            / denom)
        .sqrt();

    Ok(ProxBiasDecomposition {
        sign: inp.s_wz_z,
        scaling,
        treatment_proxy,
        outcome_proxy,
        total: inp.s_wz_z * scaling * (treatment_proxy - outcome_proxy),
    })
}

/// Proximal bias in partial-correlation form.
pub fn bias_prox(inp: &ProxBiasInputs) -> Result<f64> {
    Ok(prox_bias_terms(inp)?.total)
}

/// Proximal bias evaluated directly on an extended covariance matrix.
pub fn bias_prox_from_extended(s: &SymMatrix) -> Result<f64> {
    bias_prox(&ProxBiasInputs::from_extended(s)?)
}

/// Bounds on the unidentified scaling factor `1 / (1 - R2[W_Z ~ U | W_Y, Z])`
/// of the proximal bias, given a user cap on that R-squared.
pub fn prox_scaling_bounds(r2_wz_u_wy: f64) -> Result<(f64, f64)> {
    check_r2("R2[W_Z ~ U | W_Y, Z]", r2_wz_u_wy)?;
    Ok((1.0, 1.0 / one_minus("R2[W_Z ~ U | W_Y, Z]", r2_wz_u_wy)?))
}

/// Observable quantities entering the exclusion-violation threshold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IvSooThresholdObservables {
    /// `R2[Y ~ W_Z | Z, W_Y]` (squared partial correlation).
    pub r2_y_wz_g_zwy: f64,
    /// `R2[Z ~ W_Z | W_Y]`: squared instrument strength.
    pub r2_z_wz_g_wy: f64,
}

/// Largest exclusion violation `R2[Y ~ W_Z | W_Y, Z, U]` for which an
/// exogenous instrument is less biased than selection on observables with
/// the given confounding parameters. `gamma` converts between the two
/// outcome-confounding conditioning sets:
/// `R2[Y ~ U | W_Y, Z] = gamma * R2[Y ~ U | W_Y, W_Z, Z]`; pass 1 when the
/// treatment proxy adds nothing to the conditioning.
pub fn iv_vs_soo_exclusion_threshold(
    soo: &SooParams,
    obs: &IvSooThresholdObservables,
    gamma: f64,
) -> Result<f64> {
    check_corr("R[Y ~ U | Z, W_Z, W_Y]", soo.r_yu)?;
    check_corr("R[Z ~ U | W_Z, W_Y]", soo.r_zu)?;
    check_r2("R2[Y ~ W_Z | Z, W_Y]", obs.r2_y_wz_g_zwy)?;
    check_r2("R2[Z ~ W_Z | W_Y]", obs.r2_z_wz_g_wy)?;
    let r2_yu = soo.r_yu * soo.r_yu;
    let r2_zu = soo.r_zu * soo.r_zu;
    let adj = 1.0 - gamma * r2_yu;
    if adj <= 0.0 {
        return Err(Error::Domain {
            term: "1 - gamma * R2[Y ~ U | Z, W_Z, W_Y]".into(),
            value: adj,
        });
    }
    let denom_zu = one_minus("R2[Z ~ U | W_Z, W_Y]", r2_zu)?;
    Ok(r2_yu / adj * (r2_zu / denom_zu)
        * (1.0 - obs.r2_y_wz_g_zwy)
        * obs.r2_z_wz_g_wy)
}

/// Ratio of the proximal to the instrumental exclusion-bias magnitude,
/// built entirely from observable second moments:
/// `s_wz_z * (sd(W_Z | WY_HAT) / sd(W_Z | W_Y)) * (sd(Z | W_Y) /
/// sd(Z | WY_HAT)) * R[W_Z ~ Z | W_Y]`. Values at or below 1 signal that
/// the proximal strategy converts exclusion violations into less bias than
/// the instrumental strategy does.
pub fn prox_vs_iv_ratio_from_moments(m: &SymMatrix) -> Result<f64> {
    let m6 = m.append_projection(var::W_Y, &[var::Z, var::W_Z], "wy_hat")?;
    let hat = m6.dim() - 1;
    let hat_resid = linalg::resid_cov(&m6, &[var::W_Z, var::Z], &[hat])?;
    let sgn = if hat_resid.get(0, 1) >= 0.0 { 1.0 } else { -1.0 };
    let sd_wz_hat = linalg::resid_sd(&m6, var::W_Z, &[hat])?;
    let sd_z_hat = linalg::resid_sd(&m6, var::Z, &[hat])?;
    let sd_wz_wy = linalg::resid_sd(m, var::W_Z, &[var::W_Y])?;
    let sd_z_wy = linalg::resid_sd(m, var::Z, &[var::W_Y])?;
    let r = linalg::partial_corr(m, var::W_Z, var::Z, &[var::W_Y])?;
    Ok(sgn * (sd_wz_hat / sd_wz_wy) * (sd_z_wy / sd_z_hat) * r)
}

/// [`prox_vs_iv_ratio_from_moments`] on the weighted moments of a reduction.
pub fn prox_vs_iv_ratio(r: &ReducedData) -> Result<f64> {
    let m = ingest::moments(r)?;
    prox_vs_iv_ratio_from_moments(&m.cov)
}
