//! Linear-Gaussian data generator with exact population moments.
//!
//! The generating process is a recursive system over the confounder, the
//! two proxies, the treatment, and the outcome:
//!
//! ```text
//! U   = sd_u * e_u
//! W_Z = phi_u * U + e_wz
//! W_Y = alpha_u * U + alpha_wz * W_Z + e_wy
//! Z   = gamma_u * U + gamma_wy * W_Y + gamma_wz * W_Z + e_z
//! Y   = beta_u * U + beta_wy * W_Y + beta_wz * W_Z + tau * Z + e_y
//! ```
//!
//! with independent Gaussian shocks. Because the system is recursive, every
//! variable is a known linear combination of the five shocks, so the exact
//! population covariance is a table of dot products of loading vectors; no
//! sampling or matrix inversion is involved. That gives tests an oracle:
//! estimators evaluated on the population matrix are population estimands,
//! and their gap from `tau` is the exact asymptotic bias a simulated run
//! should approach.
//!
//! Generated datasets keep the confounder column attached (it never leaves
//! the process through CSV export), letting validation code compare
//! sample-extended moments against the population ones.

use crate::error::{Error, Result};
use crate::estimators::{self, TauSet};
use crate::ingest::{Dataset, RoleSchema};
use crate::linalg::SymMatrix;
use crate::var;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Generator parameters. Field names follow the structural equations in the
/// module docs; `sd_*` are shock standard deviations, not variable ones.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Treatment effect on the outcome; the estimand.
    pub tau: f64,
    pub beta_u: f64,
    pub beta_wy: f64,
    pub beta_wz: f64,
    pub gamma_u: f64,
    pub gamma_wy: f64,
    pub gamma_wz: f64,
    pub alpha_u: f64,
    pub alpha_wz: f64,
    pub phi_u: f64,
    pub sd_u: f64,
    pub sd_wz: f64,
    pub sd_wy: f64,
    pub sd_z: f64,
    pub sd_y: f64,
    pub n: usize,
    pub seed: u64,
    /// Replace the continuous treatment by the indicator of its latent
    /// value exceeding zero. Qualitative robustness checks only: the
    /// population moments of the binary system are not those of the linear
    /// model, so the population oracle refuses this mode.
    pub binary_z: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config::preset(Preset::Confounded)
    }
}

/// Named generator configurations. Each "valid" preset switches off exactly
/// the couplings its strategy's identifying assumptions forbid, leaving the
/// rest of the system active so the other strategies stay biased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// No outcome-side confounding (`beta_u = 0`): the adjusted regression
    /// is unbiased.
    ValidSoo,
    /// The treatment proxy is a clean instrument: no confounder loading
    /// (`phi_u = 0`), no direct outcome effect (`beta_wz = 0`), and no
    /// loading on the outcome proxy (`alpha_wz = 0`). The last one matters
    /// because the instrumental stages condition on the outcome proxy,
    /// which is a common effect of the confounder and the treatment proxy;
    /// conditioning on it would manufacture instrument-confounder
    /// correlation even with `phi_u = 0`.
    ValidIv,
    /// Clean proxies for the proximal strategy: the treatment does not
    /// enter the outcome proxy's equation (`gamma_wy = 0` keeps the proxy
    /// upstream of treatment), and the treatment proxy touches neither the
    /// outcome proxy (`alpha_wz = 0`) nor the outcome (`beta_wz = 0`).
    ValidProx,
    /// Every coupling active; all three strategies are biased.
    Confounded,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::ValidSoo,
        Preset::ValidIv,
        Preset::ValidProx,
        Preset::Confounded,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Preset::ValidSoo => "valid-soo",
            Preset::ValidIv => "valid-iv",
            Preset::ValidProx => "valid-prox",
            Preset::Confounded => "confounded",
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "valid-soo" => Ok(Preset::ValidSoo),
            "valid-iv" => Ok(Preset::ValidIv),
            "valid-prox" => Ok(Preset::ValidProx),
            "confounded" => Ok(Preset::Confounded),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected valid-soo, valid-iv, valid-prox, or confounded)"
            ))),
        }
    }
}

impl Config {
    /// The named configuration, with `n = 10000`, `seed = 42`, continuous
    /// treatment, and unit shock scales.
    pub fn preset(p: Preset) -> Config {
        let base = Config {
            tau: 0.5,
            beta_u: 0.5,
            beta_wy: 0.4,
            beta_wz: 0.3,
            gamma_u: 0.5,
            gamma_wy: 0.3,
            gamma_wz: 0.4,
            alpha_u: 0.8,
            alpha_wz: 0.2,
            phi_u: 0.3,
            sd_u: 1.0,
            sd_wz: 1.0,
            sd_wy: 1.0,
            sd_z: 1.0,
            sd_y: 1.0,
            n: 10_000,
            seed: 42,
            binary_z: false,
        };
        match p {
            Preset::Confounded => base,
            Preset::ValidSoo => Config {
                beta_u: 0.0,
                ..base
            },
            Preset::ValidIv => Config {
                phi_u: 0.0,
                beta_wz: 0.0,
                alpha_wz: 0.0,
                ..base
            },
            Preset::ValidProx => Config {
                gamma_wy: 0.0,
                alpha_wz: 0.0,
                beta_wz: 0.0,
                ..base
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let coefs = [
            ("tau", self.tau),
            ("beta_u", self.beta_u),
            ("beta_wy", self.beta_wy),
            ("beta_wz", self.beta_wz),
            ("gamma_u", self.gamma_u),
            ("gamma_wy", self.gamma_wy),
            ("gamma_wz", self.gamma_wz),
            ("alpha_u", self.alpha_u),
            ("alpha_wz", self.alpha_wz),
            ("phi_u", self.phi_u),
        ];
        for (name, v) in coefs {
            if !v.is_finite() {
                return Err(Error::Config(format!("coefficient {name} must be finite")));
            }
        }
        for (name, v) in [
            ("sd_u", self.sd_u),
            ("sd_wz", self.sd_wz),
            ("sd_wy", self.sd_wy),
            ("sd_z", self.sd_z),
            ("sd_y", self.sd_y),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "shock scale {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.n < 6 {
            return Err(Error::Config(format!(
                "simulation needs at least 6 rows, got {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Parses a configuration from a JSON document; unspecified fields take
    /// the confounded-preset defaults.
    pub fn from_json_str(s: &str) -> Result<Config> {
        let c: Config = serde_json::from_str(s)
            .map_err(|e| Error::Config(format!("invalid simulation config JSON: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

/// Loading of each model variable on the five independent unit shocks, in
/// the order `(e_u, e_wz, e_wy, e_z, e_y)`.
fn loadings(c: &Config) -> [[f64; 5]; 5] {
    let mut u = [0.0; 5];
    u[0] = c.sd_u;

    let mut w_z = [0.0; 5];
    for k in 0..5 {
        w_z[k] = c.phi_u * u[k];
    }
    w_z[1] += c.sd_wz;

    let mut w_y = [0.0; 5];
    for k in 0..5 {
        w_y[k] = c.alpha_u * u[k] + c.alpha_wz * w_z[k];
    }
    w_y[2] += c.sd_wy;

    let mut z = [0.0; 5];
    for k in 0..5 {
        z[k] = c.gamma_u * u[k] + c.gamma_wy * w_y[k] + c.gamma_wz * w_z[k];
    }
    z[3] += c.sd_z;

    let mut y = [0.0; 5];
    for k in 0..5 {
        y[k] = c.beta_u * u[k] + c.beta_wy * w_y[k] + c.beta_wz * w_z[k] + c.tau * z[k];
    }
    y[4] += c.sd_y;

    // Extended-matrix variable order: w_z, w_y, z, y, u.
    [w_z, w_y, z, y, u]
}

/// Exact population covariance of `(W_Z, W_Y, Z, Y, U)` under the linear
/// model. Errors in binary-treatment mode, which has no linear-model
/// moments.
pub fn population_covariance(c: &Config) -> Result<SymMatrix> {
    c.validate()?;
    if c.binary_z {
        return Err(Error::Config(
            "population moments are only defined for the continuous-treatment model".into(),
        ));
    }
    let vecs = loadings(c);
    let mut cov = SymMatrix::zeros(&var::EXTENDED_LABELS);
    for i in 0..5 {
        for j in 0..=i {
            let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            cov.set(i, j, dot);
        }
    }
    Ok(cov)
}

/// The observed block of [`population_covariance`].
pub fn population_observed(c: &Config) -> Result<SymMatrix> {
    Ok(population_covariance(c)?.restrict(&[var::W_Z, var::W_Y, var::Z, var::Y]))
}

/// Population estimands of the three strategies under the linear model.
/// Their gaps from `c.tau` are the exact asymptotic biases.
pub fn population_taus(c: &Config) -> Result<TauSet> {
    estimators::taus_from_moments(&population_observed(c)?)
}

/// The role schema generated datasets carry: columns named after the model
/// variables, no covariates, and no rescaling so estimates stay in the
/// generator's units.
pub fn simulation_schema() -> RoleSchema {
    RoleSchema {
        outcome: "y".into(),
        treatment: "z".into(),
        treatment_proxy: "w_z".into(),
        outcome_proxy: "w_y".into(),
        covariates: Vec::new(),
        standardize_yz: false,
    }
}

/// Draws one dataset from the model. The confounder column stays attached
/// to the dataset for validation but is not part of the observed roles.
pub fn simulate(c: &Config) -> Result<Dataset> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let n = c.n;
    let mut draw = |sd: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                sd * e
            })
            .collect()
    };
    let u = draw(c.sd_u);
    let e_wz = draw(c.sd_wz);
    let e_wy = draw(c.sd_wy);
    let e_z = draw(c.sd_z);
    let e_y = draw(c.sd_y);

    let mut w_z = vec![0.0; n];
    let mut w_y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut y = vec![0.0; n];
    for i in 0..n {
        w_z[i] = c.phi_u * u[i] + e_wz[i];
        w_y[i] = c.alpha_u * u[i] + c.alpha_wz * w_z[i] + e_wy[i];
        let z_star = c.gamma_u * u[i] + c.gamma_wy * w_y[i] + c.gamma_wz * w_z[i] + e_z[i];
        z[i] = if c.binary_z {
            if z_star > 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            z_star
        };
        y[i] = c.beta_u * u[i] + c.beta_wy * w_y[i] + c.beta_wz * w_z[i] + c.tau * z[i] + e_y[i];
    }

    let mut d = Dataset::from_columns(
        simulation_schema(),
        &[("w_z", w_z), ("w_y", w_y), ("z", z), ("y", y)],
    )?;
    d.set_confounder(u);
    Ok(d)
}

/// Writes the observed columns of a dataset as CSV in role order
/// (`w_z,w_y,z,y`). The confounder column is deliberately not exported:
/// files produced here are inputs for the estimation pipeline, which must
/// not see it.
pub fn write_observed_csv<W: Write>(d: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| Error::Io {
        path: "<simulated csv>".into(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e),
    };
    let schema = d.schema();
    w.write_record([
        schema.treatment_proxy.as_str(),
        schema.outcome_proxy.as_str(),
        schema.treatment.as_str(),
        schema.outcome.as_str(),
    ])
    .map_err(to_io)?;
    let (w_z, w_y, z, y) = (d.column_w_z(), d.column_w_y(), d.column_z(), d.column_y());
    for i in 0..d.n() {
        w.write_record([
            format!("{}", w_z[i]),
            format!("{}", w_y[i]),
            format!("{}", z[i]),
            format!("{}", y[i]),
        ])
        .map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<simulated csv>".into(),
        source: e,
    })?;
    Ok(())
}
