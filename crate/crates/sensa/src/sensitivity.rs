//! Robustness values, minimal-violation searches, covariate benchmarking,
//! and a fractional-weight bootstrap.
//!
//! The central quantity is the targeted robustness value: the smallest
//! squared norm of a strategy's assumption-violation vector over confounder
//! extensions whose implied bias equals a target `b`, subject to the
//! equal-confounding restriction that ties the outcome-side confounding
//! parameter to the treatment-side one (`r4 = s * r3` with a single sign).
//! Under that restriction the bias reduces to a one-parameter curve in
//! `r3`, so the target pins `|r3|` down exactly while the proxy-side
//! parameters `(r1, r2)` remain free to shrink the violation norm. The
//! search runs a penalized Nelder-Mead from a Halton start set plus two
//! warm starts placed at the closed-form diagonal solution, doubling the
//! penalty weight until the bias constraint holds at tolerance.
//!
//! The reported violation norm is always recomputed from a full confounder
//! extension at the returned minimizer, never read back from the
//! optimizer's internal objective, so the result invariant "trv equals the
//! squared violation norm at rho_min" holds by construction.

use crate::error::{Error, Result};
use crate::estimators;
use crate::ingest::{self, Dataset};
use crate::linalg;
use crate::linalg::SymMatrix;
use crate::optim::{self, SimplexOptions};
use crate::sigma::{self, Rho, SooBiasScale, ViolationVector, RHO_CLAMP};
use crate::{var, Strategy};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Penalty weight ceiling; a start whose constraint is still slack here is
/// abandoned as infeasible.
pub const LAMBDA_CAP: f64 = 1e12;

/// Below this robustness value the per-component allocation shares are
/// reported as undefined rather than as ratios of roundoff.
pub const ALLOCATION_TOL: f64 = 1e-12;

/// Box half-width for the Halton start set, kept inside the correlation
/// clamp so every start is strictly feasible.
const START_BOX: f64 = 0.95;

/// Initial Nelder-Mead simplex edge length.
const SIMPLEX_EDGE: f64 = 0.05;

/// Weight on the quadratic barrier that pushes iterates back inside the
/// correlation clamp.
const BARRIER_WEIGHT: f64 = 1e6;

/// Tuning for the robustness-value search. The defaults are deliberately
/// generous: objective evaluations cost microseconds, so oversampling
/// starts is cheaper than diagnosing a missed basin.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrvOptions {
    /// Number of Halton starts (two warm starts are always added).
    pub starts: usize,
    /// Initial weight of the quadratic bias-constraint penalty.
    pub lambda0: f64,
    /// Required accuracy of the bias constraint at the returned minimizer.
    pub constraint_tol: f64,
    /// Nelder-Mead stopping tolerance on the objective spread.
    pub objective_tol: f64,
    /// Nelder-Mead iteration cap per penalty round.
    pub max_iters: usize,
}

impl Default for TrvOptions {
    fn default() -> Self {
        TrvOptions {
            starts: 64,
            lambda0: 1e4,
            constraint_tol: 1e-6,
            objective_tol: 1e-10,
            max_iters: 500,
        }
    }
}

impl TrvOptions {
    fn validate(&self) -> Result<()> {
        if self.starts == 0 || self.max_iters == 0 {
            return Err(Error::Config(
                "robustness search needs at least one start and one iteration".into(),
            ));
        }
        if !(self.lambda0 > 0.0) || !(self.constraint_tol > 0.0) || !(self.objective_tol > 0.0) {
            return Err(Error::Config(
                "robustness search tolerances and penalty weight must be positive".into(),
            ));
        }
        Ok(())
    }

    fn simplex(&self) -> SimplexOptions {
        SimplexOptions {
            max_iters: self.max_iters,
            f_tol: self.objective_tol,
            scale: SIMPLEX_EDGE,
        }
    }
}

/// Result of a targeted robustness-value search.
#[derive(Debug, Clone, Serialize)]
pub struct TrvResult {
    pub strategy: Strategy,
    /// The bias target the search was constrained to.
    pub b: f64,
    /// Minimal squared violation norm over extensions implying bias `b`.
    pub trv: f64,
    /// The minimizing confounder parameters.
    pub rho_min: Rho,
    /// Violation vector at `rho_min`, recomputed from a full extension.
    pub violations: ViolationVector,
    /// Bias implied by `rho_min`, recomputed from a full extension; within
    /// the constraint tolerance of `b`.
    pub bias_achieved: f64,
    /// Share of `trv` carried by each violation component, parallel to
    /// `violations.names`; sums to one. `None` when `trv` is numerically
    /// zero and shares are undefined.
    pub allocations: Option<Vec<f64>>,
    /// The options the search ran with, for reproducibility.
    pub options: TrvOptions,
}

impl TrvResult {
    /// Allocation shares, or an error when the robustness value is zero and
    /// no direction is distinguished.
    pub fn allocation_shares(&self) -> Result<&[f64]> {
        self.allocations
            .as_deref()
            .ok_or(Error::UndefinedAllocation { trv: self.trv })
    }
}

/// The diagonal bias curve shared by every strategy: under the
/// equal-confounding restriction, bias is the strategy's estimand gap plus
/// the selection-on-observables kernel at `(r3, s * r3)`.
struct BiasCurve {
    scale: SooBiasScale,
    gap: f64,
}

impl BiasCurve {
    fn new(obs: &SymMatrix, strategy: Strategy) -> Result<(BiasCurve, f64, f64)> {
        let scale = SooBiasScale::new(obs)?;
        let tau_soo = estimators::tau_soo_from_moments(obs)?;
        let tau_strat = match strategy {
            Strategy::Soo => tau_soo,
            Strategy::Iv => estimators::tau_iv_from_moments(obs)?,
            Strategy::Prox => estimators::tau_prox_from_moments(obs)?,
        };
        Ok((
            BiasCurve {
                scale,
                gap: tau_strat - tau_soo,
            },
            tau_strat,
            tau_soo,
        ))
    }

    fn bias(&self, r3: f64, r4: f64) -> f64 {
        self.scale
            .bias(r3, r4)
            .map(|k| self.gap + k)
            .unwrap_or(f64::INFINITY)
    }

    /// `|r3|` solving the diagonal bias equation for the given target, via
    /// the closed-form root of `t^2 / sqrt(1 - t^2) = |b - gap| / k`.
    fn diagonal_r3(&self, b: f64) -> f64 {
        let f = (b - self.gap).abs() / self.scale.k();
        let v = (-f * f + (f.powi(4) + 4.0 * f * f).sqrt()) / 2.0;
        v.max(0.0).sqrt()
    }

    fn feasible_range(&self) -> (f64, f64) {
        let m = self.scale.max_abs_bias();
        (self.gap - m, self.gap + m)
    }
}

fn clamp_component(v: f64) -> f64 {
    v.clamp(-RHO_CLAMP, RHO_CLAMP)
}

fn barrier(x: &[f64]) -> f64 {
    x.iter()
        .map(|v| {
            let d = (v.abs() - RHO_CLAMP).max(0.0);
            d * d
        })
        .sum::<f64>()
        * BARRIER_WEIGHT
}

/// Squared violation norm at `rho`, evaluated the cheap way for selection
/// on observables (its components are exactly `(r3, r4)`) and through a
/// full confounder extension otherwise. Returns infinity on numerical
/// failure so the simplex steps around the point.
fn violation_norm_sq(obs: &SymMatrix, strategy: Strategy, rho: &Rho) -> f64 {
    match strategy {
        Strategy::Soo => rho.r3 * rho.r3 + rho.r4 * rho.r4,
        Strategy::Iv | Strategy::Prox => sigma::extend_covariance(obs, rho)
            .and_then(|ext| sigma::violations(&ext, strategy))
            .map(|v| v.norm_sq())
            .unwrap_or(f64::INFINITY),
    }
}

struct Candidate {
    x: [f64; 3],
    a2: f64,
}

/// One penalized start: Nelder-Mead with the penalty weight doubled until
/// the bias constraint holds, or `None` when the weight ceiling is reached
/// first.
#[allow(clippy::too_many_arguments)]
fn run_start(
    obs: &SymMatrix,
    strategy: Strategy,
    curve: &BiasCurve,
    s: f64,
    b: f64,
    opts: &TrvOptions,
    x0: [f64; 3],
) -> Option<Candidate> {
    let eval = |x: &[f64]| -> (f64, f64) {
        let rho = Rho::new(
            clamp_component(x[0]),
            clamp_component(x[1]),
            clamp_component(x[2]),
            s * clamp_component(x[2]),
        );
        let a2 = violation_norm_sq(obs, strategy, &rho);
        let bias = curve.bias(rho.r3, rho.r4);
        (a2, bias)
    };

    let mut x = x0.to_vec();
    let mut lambda = opts.lambda0;
    loop {
        let objective = |p: &[f64]| -> f64 {
            let (a2, bias) = eval(p);
            if !a2.is_finite() || !bias.is_finite() {
                return f64::INFINITY;
            }
            a2 + lambda * (bias - b) * (bias - b) + barrier(p)
        };
        let (xn, _) = optim::nelder_mead(objective, &x, &opts.simplex());
        x = xn;
        let (a2, bias) = eval(&x);
        if a2.is_finite() && (bias - b).abs() <= opts.constraint_tol {
            return Some(Candidate {
                x: [
                    clamp_component(x[0]),
                    clamp_component(x[1]),
                    clamp_component(x[2]),
                ],
                a2,
            });
        }
        lambda *= 2.0;
        if lambda > LAMBDA_CAP {
            return None;
        }
    }
}

/// Targeted robustness value: the minimal squared violation norm of
/// `strategy` over confounder extensions of `obs` whose implied bias equals
/// `b`, under the equal-confounding restriction. Errors when `b` lies
/// outside the bias range reachable inside the correlation clamp.
pub fn trv(obs: &SymMatrix, strategy: Strategy, b: f64, opts: &TrvOptions) -> Result<TrvResult> {
    opts.validate()?;
    if !b.is_finite() {
        return Err(Error::Domain {
            term: "bias target".into(),
            value: b,
        });
    }
    let (curve, tau_strat, _) = BiasCurve::new(obs, strategy)?;
    let (lo, hi) = curve.feasible_range();
    if b < lo || b > hi {
        return Err(Error::Infeasible { b, lo, hi });
    }
    let b_diag = b - curve.gap;
    let s = if b_diag < 0.0 { -1.0 } else { 1.0 };
    let t_star = curve.diagonal_r3(b);

    let mut starts: Vec<[f64; 3]> = vec![[0.0, 0.0, t_star], [0.0, 0.0, -t_star]];
    for i in 1..=opts.starts {
        let map = |u: f64| -START_BOX + 2.0 * START_BOX * u;
        starts.push([
            map(optim::halton(i, 2)),
            map(optim::halton(i, 3)),
            map(optim::halton(i, 5)),
        ]);
    }

    let candidates: Vec<Option<Candidate>> = starts
        .par_iter()
        .map(|x0| run_start(obs, strategy, &curve, s, b, opts, *x0))
        .collect();

    let mut best: Option<Candidate> = None;
    for cand in candidates.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(cur) => cand.a2 < cur.a2,
        };
        if better {
            best = Some(cand);
        }
    }
    let mut best = best.ok_or_else(|| {
        Error::Optimization(format!(
            "no start met the bias constraint |bias - {b}| <= {} before the penalty cap",
            opts.constraint_tol
        ))
    })?;

    if strategy == Strategy::Soo {
        // The proxy-side parameters never enter this strategy's violation
        // vector or the bias, so the minimizer is reported in canonical
        // form with them at zero.
        best.x[0] = 0.0;
        best.x[1] = 0.0;
    }

    let rho_min = Rho::new(best.x[0], best.x[1], best.x[2], s * best.x[2]);
    let ext = sigma::extend_covariance(obs, &rho_min)?;
    let violations = sigma::violations(&ext, strategy)?;
    let trv = violations.norm_sq();
    let bias_achieved = tau_strat - sigma::tau_true(&ext)?;
    if (bias_achieved - b).abs() > 10.0 * opts.constraint_tol {
        return Err(Error::Optimization(format!(
            "minimizer drifted off the bias constraint: achieved {bias_achieved}, target {b}"
        )));
    }
    let allocations = if trv > ALLOCATION_TOL {
        Some(violations.values.iter().map(|v| v * v / trv).collect())
    } else {
        None
    };
    Ok(TrvResult {
        strategy,
        b,
        trv,
        rho_min,
        violations,
        bias_achieved,
        allocations,
        options: *opts,
    })
}

/// Closed-form robustness value for selection on observables. Its violation
/// vector is exactly the confounding pair `(r3, r4)`, so under equal
/// confounding the minimum is `2 v` with `v` the root of
/// `v^2 + f^2 v - f^2 = 0`, `f = |b| / k`, and `k` the residual-sd ratio of
/// the observed matrix. Used as an independent check on the numerical
/// search.
pub fn soo_trv_closed_form(obs: &SymMatrix, b: f64) -> Result<f64> {
    let (curve, _, _) = BiasCurve::new(obs, Strategy::Soo)?;
    let (lo, hi) = curve.feasible_range();
    if b < lo || b > hi {
        return Err(Error::Infeasible { b, lo, hi });
    }
    let t = curve.diagonal_r3(b);
    Ok(2.0 * t * t)
}

/// Minimal-norm confounder parameters implying the same bias and the same
/// violation norm as a completed robustness search: minimizes `|rho|^2`
/// subject to the bias constraint and to the violation norm staying at
/// `res.trv` within tolerance, keeping the equal-confounding sign of
/// `res.rho_min`. Returns `res.rho_min` unchanged when the search finds
/// nothing feasible with a smaller norm.
pub fn rho_star(obs: &SymMatrix, res: &TrvResult, opts: &TrvOptions) -> Result<Rho> {
    opts.validate()?;
    let (curve, _, _) = BiasCurve::new(obs, res.strategy)?;
    let s = if res.rho_min.r3 * res.rho_min.r4 < 0.0 {
        -1.0
    } else {
        1.0
    };
    let b = res.b;
    let trv_target = res.trv;
    let atol = opts
        .constraint_tol
        .max(opts.constraint_tol * trv_target.abs());

    let eval = |x: &[f64]| -> (f64, f64, f64) {
        let rho = Rho::new(
            clamp_component(x[0]),
            clamp_component(x[1]),
            clamp_component(x[2]),
            s * clamp_component(x[2]),
        );
        let norm = rho.norm_sq();
        let a2 = violation_norm_sq(obs, res.strategy, &rho);
        let bias = curve.bias(rho.r3, rho.r4);
        (norm, a2, bias)
    };

    let mut x = vec![res.rho_min.r1, res.rho_min.r2, res.rho_min.r3];
    let mut lambda_bias = opts.lambda0;
    let mut lambda_norm = opts.lambda0;
    let mut feasible: Option<Vec<f64>> = None;
    loop {
        let objective = |p: &[f64]| -> f64 {
            let (norm, a2, bias) = eval(p);
            if !a2.is_finite() || !bias.is_finite() {
                return f64::INFINITY;
            }
            norm + lambda_bias * (bias - b) * (bias - b)
                + lambda_norm * (a2 - trv_target) * (a2 - trv_target)
                + barrier(p)
        };
        let (xn, _) = optim::nelder_mead(objective, &x, &opts.simplex());
        x = xn;
        let (_, a2, bias) = eval(&x);
        let bias_ok = (bias - b).abs() <= opts.constraint_tol;
        let norm_ok = a2.is_finite() && (a2 - trv_target).abs() <= atol;
        if bias_ok && norm_ok {
            feasible = Some(x.clone());
            break;
        }
        if !bias_ok {
            lambda_bias *= 2.0;
        }
        if !norm_ok {
            lambda_norm *= 2.0;
        }
        if lambda_bias > LAMBDA_CAP || lambda_norm > LAMBDA_CAP {
            break;
        }
    }

    match feasible {
        Some(x) => {
            let mut cand = Rho::new(
                clamp_component(x[0]),
                clamp_component(x[1]),
                clamp_component(x[2]),
                s * clamp_component(x[2]),
            );
            if res.strategy == Strategy::Soo {
                cand.r1 = 0.0;
                cand.r2 = 0.0;
            }
            if cand.norm_sq() <= res.rho_min.norm_sq() + opts.constraint_tol {
                Ok(cand)
            } else {
                Ok(res.rho_min)
            }
        }
        None => Ok(res.rho_min),
    }
}

/// One observed covariate's strength, expressed in the confounder
/// parameterization, plus the shift in the adjusted estimate from dropping
/// it. Fields are `None` with `error` set when that covariate's moments are
/// too degenerate to measure, so one collinear column does not sink the
/// whole table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRow {
    pub covariate: String,
    /// Confounder parameters a latent variable would need to mimic this
    /// covariate, measured after partialling out the remaining covariates.
    pub rho_hat: Option<Rho>,
    /// Squared violation norm of the chosen strategy under `rho_hat`.
    pub violation_norm_sq: Option<f64>,
    /// Change in the adjusted treatment coefficient from omitting the
    /// covariate: full-design estimate minus leave-one-out estimate.
    pub delta_tau: Option<f64>,
    pub error: Option<String>,
}

/// Benchmarks every covariate in the schema: how strong a confounder would
/// have to be, in the extension parameterization, to act like that
/// covariate. Requires at least one covariate.
pub fn benchmark_covariates(d: &Dataset, strategy: Strategy) -> Result<Vec<BenchmarkRow>> {
    let names: Vec<String> = d.schema().covariates.clone();
    if names.is_empty() {
        return Err(Error::Config(
            "benchmarking needs at least one covariate in the schema".into(),
        ));
    }
    let full = ingest::partial_out(d, None)?;
    let m_full = ingest::moments(&full)?;
    let tau_full = estimators::tau_soo_from_moments(&m_full.cov)?;

    let rows = names
        .par_iter()
        .map(
            |name| match benchmark_one(d, name, &m_full.cov, tau_full, strategy) {
                Ok(row) => row,
                Err(e) => BenchmarkRow {
                    covariate: name.clone(),
                    rho_hat: None,
                    violation_norm_sq: None,
                    delta_tau: None,
                    error: Some(e.to_string()),
                },
            },
        )
        .collect();
    Ok(rows)
}

fn benchmark_one(
    d: &Dataset,
    name: &str,
    m_full: &SymMatrix,
    tau_full: f64,
    strategy: Strategy,
) -> Result<BenchmarkRow> {
    let drop = ingest::partial_out(d, Some(name))?;
    let m_drop = ingest::moments(&drop)?;
    let tau_drop = estimators::tau_soo_from_moments(&m_drop.cov)?;
    let x_resid = ingest::residualize_covariate(d, name)?;
    let m5 = ingest::moments_with_extra(&drop, &x_resid, name)?;

    let x = m5.dim() - 1;
    let pc = |i, j, cond: &[usize]| linalg::partial_corr(&m5, i, j, cond);
    let rho_hat = Rho::new(
        clamp_component(pc(x, var::W_Z, &[])?),
        clamp_component(pc(x, var::W_Y, &[var::W_Z])?),
        clamp_component(pc(x, var::Z, &[var::W_Z, var::W_Y])?),
        clamp_component(pc(x, var::Y, &[var::Z, var::W_Z, var::W_Y])?),
    );

    let ext = sigma::extend_covariance(m_full, &rho_hat)?;
    let a2 = sigma::violations(&ext, strategy)?.norm_sq();

    Ok(BenchmarkRow {
        covariate: name.to_string(),
        rho_hat: Some(rho_hat),
        violation_norm_sq: Some(a2),
        delta_tau: Some(tau_full - tau_drop),
        error: None,
    })
}

/// Bootstrap controls. `equal_weights` replaces the random weights by the
/// constant vector, collapsing every replicate onto the point estimate; it
/// exists so downstream code can assert that dispersion is exactly zero
/// when nothing varies.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub equal_weights: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 200,
            seed: 17,
            equal_weights: false,
        }
    }
}

/// Dispersion summary of a bootstrapped statistic vector.
#[derive(Debug, Clone, Serialize)]
pub struct BootstrapSummary {
    pub names: Vec<String>,
    /// Statistic on the original weights.
    pub point: Vec<f64>,
    /// Replicate medians, per statistic.
    pub median: Vec<f64>,
    /// Unscaled median absolute deviation about the replicate median.
    pub mad: Vec<f64>,
    pub replicates: usize,
    /// Replicates whose statistic errored or returned a non-finite value.
    pub failed: usize,
    pub seed: u64,
}

fn derive_seed(seed: u64, idx: u64) -> u64 {
    let mut z = seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_weights(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::Exp1)).collect();
    let sum: f64 = w.iter().sum();
    let scale = n as f64 / sum;
    for wi in &mut w {
        *wi *= scale;
    }
    w
}

fn median_of(sorted: &mut [f64]) -> f64 {
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Fractional-weight bootstrap of an arbitrary statistic vector. Each
/// replicate draws exponential row weights normalized to sum to n, so
/// every row keeps strictly positive weight and statistics that would break
/// on resampled-away rows (indicator covariates with a single nonzero row,
/// near-boundary robustness targets) stay computable. Replicates whose
/// statistic errors or returns a non-finite value are dropped; more than
/// 20% of them failing is an error. Statistic values are summarized by
/// their median and unscaled median absolute deviation.
///
/// Replicate weights are derived deterministically from `(seed, replicate
/// index)`, so results are identical across thread counts and runs.
pub fn bootstrap<F>(
    d: &Dataset,
    names: &[&str],
    stat: F,
    opts: &BootstrapOptions,
) -> Result<BootstrapSummary>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if opts.replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let point = stat(d)?;
    if point.len() != names.len() {
        return Err(Error::Dimension(format!(
            "statistic returned {} values for {} names",
            point.len(),
            names.len()
        )));
    }
    let n = d.n();

    let reps: Vec<Option<Vec<f64>>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let w = if opts.equal_weights {
                vec![1.0; n]
            } else {
                draw_weights(derive_seed(opts.seed, b as u64), n)
            };
            let db = match d.with_weights(&w) {
                Ok(v) => v,
                Err(_) => return None,
            };
            match stat(&db) {
                Ok(v) if v.len() == names.len() && v.iter().all(|x| x.is_finite()) => Some(v),
                _ => None,
            }
        })
        .collect();

    let total = opts.replicates;
    let failed = reps.iter().filter(|r| r.is_none()).count();
    if failed * 5 > total {
        return Err(Error::Bootstrap { failed, total });
    }

    let mut median = Vec::with_capacity(names.len());
    let mut mad = Vec::with_capacity(names.len());
    for k in 0..names.len() {
        let mut vals: Vec<f64> = reps.iter().flatten().map(|v| v[k]).collect();
        if vals.is_empty() {
            return Err(Error::Bootstrap { failed, total });
        }
        let med = median_of(&mut vals);
        let mut devs: Vec<f64> = vals.iter().map(|v| (v - med).abs()).collect();
        median.push(med);
        mad.push(median_of(&mut devs));
    }

    Ok(BootstrapSummary {
        names: names.iter().map(|s| s.to_string()).collect(),
        point,
        median,
        mad,
        replicates: total,
        failed,
        seed: opts.seed,
    })
}
