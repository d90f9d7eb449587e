//! Checks the robustness-value search against the closed form, the
//! minimal-norm witness, covariate benchmarking, and the fractional-weight
//! bootstrap.

mod common;

use approx::assert_abs_diff_eq;
use common::random_config;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sensa::ingest::{moments, partial_out, Dataset, RoleSchema};
use sensa::sensitivity::{
    benchmark_covariates, bootstrap, rho_star, soo_trv_closed_form, trv, BootstrapOptions,
    TrvOptions,
};
use sensa::sigma::{bias_at, extend_covariance, violations};
use sensa::sim::{self, Config, Preset};
use sensa::{Error, Strategy};

fn observed(seed: u64) -> sensa::linalg::SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sim::population_observed(&random_config(&mut rng, false)).unwrap()
}

/// Options tuned down for test speed; the search space is only three
/// dimensional and these instances are well conditioned.
fn fast_opts() -> TrvOptions {
    TrvOptions {
        starts: 12,
        ..TrvOptions::default()
    }
}

#[test]
fn selection_search_matches_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    for i in 0..8 {
        let obs = observed(3100 + i);
        let b = rng.gen_range(-0.5..0.5);
        let closed = soo_trv_closed_form(&obs, b).unwrap();
        let res = trv(&obs, Strategy::Soo, b, &fast_opts()).unwrap();
        // The search meets the bias constraint only to `constraint_tol`, so
        // it can sit a sliver off the exact closed-form curve.
        assert!(
            (res.trv - closed).abs() < 1e-4,
            "search {} vs closed form {closed} on instance {i}",
            res.trv
        );
        // Equal confounding at the optimum.
        assert_abs_diff_eq!(res.rho_min.r3.abs(), res.rho_min.r4.abs(), epsilon = 1e-8);
        assert_eq!(res.rho_min.r1, 0.0);
        assert_eq!(res.rho_min.r2, 0.0);
        assert!((res.bias_achieved - b).abs() <= 10.0 * res.options.constraint_tol);
        let shares = res.allocation_shares().unwrap();
        assert_abs_diff_eq!(shares.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
        // The two components are squared equal magnitudes, so the split is
        // even.
        assert_abs_diff_eq!(shares[0], 0.5, epsilon = 1e-6);
    }
}

#[test]
fn zero_bias_target_needs_no_confounding_for_selection() {
    let obs = observed(3200);
    let res = trv(&obs, Strategy::Soo, 0.0, &fast_opts()).unwrap();
    assert!(res.trv <= 1e-12);
    assert_eq!(res.rho_min.as_array(), [0.0; 4]);
    assert!(res.allocations.is_none());
    assert!(matches!(
        res.allocation_shares(),
        Err(Error::UndefinedAllocation { .. })
    ));
}

#[test]
fn infeasible_targets_report_the_reachable_range() {
    let obs = observed(3300);
    match trv(&obs, Strategy::Soo, 1e4, &fast_opts()) {
        Err(Error::Infeasible { b, lo, hi }) => {
            assert_eq!(b, 1e4);
            assert!(lo < hi);
            assert!(hi < 1e4);
        }
        other => panic!("expected an infeasibility error, got {other:?}"),
    }
    assert!(matches!(
        trv(&obs, Strategy::Soo, f64::NAN, &fast_opts()),
        Err(Error::Domain { .. })
    ));
    let bad = TrvOptions {
        starts: 0,
        ..TrvOptions::default()
    };
    assert!(matches!(
        trv(&obs, Strategy::Soo, 0.1, &bad),
        Err(Error::Config(_))
    ));
}

#[test]
fn instrument_search_beats_the_diagonal_warm_start_and_allocates_fully() {
    let obs = observed(3400);
    let taus = sensa::estimators::taus_from_moments(&obs).unwrap();
    let b = 0.15;
    let res = trv(&obs, Strategy::Iv, b, &fast_opts()).unwrap();
    assert!((res.bias_achieved - b).abs() <= 1e-5);
    assert_eq!(res.violations.names, ["exogeneity", "exclusion"]);
    let shares = res.allocation_shares().unwrap();
    assert_abs_diff_eq!(shares.iter().sum::<f64>(), 1.0, epsilon = 1e-8);

    // The diagonal point with untouched proxy parameters satisfies the same
    // bias constraint, so the optimum can only improve on its violation
    // norm.
    let gap = taus.iv - taus.soo;
    let diag = {
        let r = trv(&obs, Strategy::Soo, b - gap, &fast_opts()).unwrap();
        sensa::sigma::Rho::new(0.0, 0.0, r.rho_min.r3, r.rho_min.r4)
    };
    assert!((bias_at(&obs, &taus, &diag, Strategy::Iv).unwrap() - b).abs() < 1e-5);
    let diag_norm = violations(&extend_covariance(&obs, &diag).unwrap(), Strategy::Iv)
        .unwrap()
        .norm_sq();
    assert!(
        res.trv <= diag_norm + 1e-8,
        "search {} should not exceed the warm-start norm {diag_norm}",
        res.trv
    );
}

#[test]
fn matching_the_estimand_gap_still_requires_violations_under_confounding() {
    // At a bias target equal to the instrument's estimand gap, no synthetic
    // confounding is needed (the diagonal solves it at zero), but the
    // instrument's own assumption violations remain priced in.
    let obs = sim::population_observed(&Config::preset(Preset::Confounded)).unwrap();
    let taus = sensa::estimators::taus_from_moments(&obs).unwrap();
    let gap = taus.iv - taus.soo;
    let res = trv(&obs, Strategy::Iv, gap, &fast_opts()).unwrap();
    assert!(
        res.trv > 1e-4,
        "a confounded instrument cannot be violation-free, got {}",
        res.trv
    );
}

#[test]
fn valid_instrument_populations_need_no_violations_to_explain_zero_bias() {
    let obs = sim::population_observed(&Config::preset(Preset::ValidIv)).unwrap();
    let res = trv(&obs, Strategy::Iv, 0.0, &fast_opts()).unwrap();
    assert!(
        res.trv < 1e-8,
        "zero bias should be explainable without violations, got {}",
        res.trv
    );
}

#[test]
fn minimum_norm_witness_keeps_the_constraints_and_never_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3500);
    for (i, strategy) in [Strategy::Soo, Strategy::Iv, Strategy::Prox]
        .into_iter()
        .enumerate()
    {
        let obs = observed(3600 + i as u64);
        let taus = sensa::estimators::taus_from_moments(&obs).unwrap();
        let b = rng.gen_range(0.05..0.3);
        let opts = fast_opts();
        let res = trv(&obs, strategy, b, &opts).unwrap();
        let star = rho_star(&obs, &res, &opts).unwrap();

        assert!(star.norm_sq() <= res.rho_min.norm_sq() + 2.0 * opts.constraint_tol);
        let bias = bias_at(&obs, &taus, &star, strategy).unwrap();
        assert!((bias - b).abs() <= 2.0 * opts.constraint_tol);
        let a2 = violations(&extend_covariance(&obs, &star).unwrap(), strategy)
            .unwrap()
            .norm_sq();
        let atol = opts.constraint_tol.max(opts.constraint_tol * res.trv);
        assert!(
            (a2 - res.trv).abs() <= 2.0 * atol,
            "witness violation norm {a2} drifted from {}",
            res.trv
        );
        if strategy == Strategy::Soo {
            assert_eq!(star.r1, 0.0);
            assert_eq!(star.r2, 0.0);
        }
    }
}

fn confounder_proxy_dataset(n: usize, seed: u64) -> Dataset {
    let c = Config {
        n,
        seed,
        ..Config::preset(Preset::Confounded)
    };
    let d = sim::simulate(&c).unwrap();
    let u = d.confounder().unwrap().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    // One covariate tracks the confounder closely, one is pure noise.
    let x_strong: Vec<f64> = u.iter().map(|&v| v + 0.3 * rng.gen_range(-1.0..1.0)).collect();
    let x_noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let schema = RoleSchema {
        outcome: "y".into(),
        treatment: "z".into(),
        treatment_proxy: "w_z".into(),
        outcome_proxy: "w_y".into(),
        covariates: vec!["x_strong".into(), "x_noise".into()],
        standardize_yz: false,
    };
    Dataset::from_columns(
        schema,
        &[
            ("w_z", d.column_w_z().to_vec()),
            ("w_y", d.column_w_y().to_vec()),
            ("z", d.column_z().to_vec()),
            ("y", d.column_y().to_vec()),
            ("x_strong", x_strong),
            ("x_noise", x_noise),
        ],
    )
    .unwrap()
}

#[test]
fn benchmarking_ranks_a_confounder_proxy_above_noise() {
    let d = confounder_proxy_dataset(20_000, 77);
    let rows = benchmark_covariates(&d, Strategy::Soo).unwrap();
    assert_eq!(rows.len(), 2);
    let strong = rows.iter().find(|r| r.covariate == "x_strong").unwrap();
    let noise = rows.iter().find(|r| r.covariate == "x_noise").unwrap();
    assert!(strong.error.is_none() && noise.error.is_none());

    let rho_s = strong.rho_hat.unwrap();
    let rho_n = noise.rho_hat.unwrap();
    // The proxy of the actual confounder shows strong confounding in both
    // directions; noise shows next to none.
    assert!(rho_s.r3.abs() > 0.2, "strong r3 = {}", rho_s.r3);
    assert!(rho_s.r4.abs() > 0.1, "strong r4 = {}", rho_s.r4);
    assert!(rho_n.r3.abs() < 0.05 && rho_n.r4.abs() < 0.05);
    assert!(strong.violation_norm_sq.unwrap() > 10.0 * noise.violation_norm_sq.unwrap());
    assert!(strong.delta_tau.unwrap().abs() > 10.0 * noise.delta_tau.unwrap().abs());
}

#[test]
fn benchmarking_requires_covariates_and_a_full_rank_design() {
    let c = Config {
        n: 200,
        ..Config::preset(Preset::Confounded)
    };
    let d = sim::simulate(&c).unwrap();
    assert!(matches!(
        benchmark_covariates(&d, Strategy::Soo),
        Err(Error::Config(_))
    ));

    // An exactly collinear covariate pair breaks the full adjustment that
    // every row is measured against.
    let x: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
    let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let schema = RoleSchema {
        covariates: vec!["a".into(), "b".into()],
        ..sim::simulation_schema()
    };
    let dd = Dataset::from_columns(
        schema,
        &[
            ("w_z", d.column_w_z().to_vec()),
            ("w_y", d.column_w_y().to_vec()),
            ("z", d.column_z().to_vec()),
            ("y", d.column_y().to_vec()),
            ("a", x),
            ("b", x2),
        ],
    )
    .unwrap();
    assert!(benchmark_covariates(&dd, Strategy::Soo).is_err());
}

fn tau_statistic(d: &Dataset) -> sensa::error::Result<Vec<f64>> {
    let r = partial_out(d, None)?;
    let m = moments(&r)?;
    let taus = sensa::estimators::taus_from_moments(&m.cov)?;
    Ok(vec![taus.soo, taus.iv, taus.prox])
}

#[test]
fn bootstrap_is_deterministic_for_a_fixed_seed() {
    let c = Config {
        n: 400,
        seed: 88,
        ..Config::preset(Preset::Confounded)
    };
    let d = sim::simulate(&c).unwrap();
    let opts = BootstrapOptions {
        replicates: 50,
        seed: 9,
        equal_weights: false,
    };
    let names = ["soo", "iv", "prox"];
    let a = bootstrap(&d, &names, tau_statistic, &opts).unwrap();
    let b = bootstrap(&d, &names, tau_statistic, &opts).unwrap();
    assert_eq!(a.median, b.median);
    assert_eq!(a.mad, b.mad);
    assert_eq!(a.point, b.point);
    assert_eq!(a.failed, 0);
    assert!(a.mad.iter().all(|&m| m > 0.0), "weights must move the estimates");

    let other = bootstrap(
        &d,
        &names,
        tau_statistic,
        &BootstrapOptions { seed: 10, ..opts },
    )
    .unwrap();
    assert_ne!(a.median, other.median);
}

#[test]
fn equal_weights_collapse_dispersion_to_zero() {
    let c = Config {
        n: 300,
        seed: 90,
        ..Config::preset(Preset::Confounded)
    };
    let d = sim::simulate(&c).unwrap();
    let opts = BootstrapOptions {
        replicates: 20,
        seed: 1,
        equal_weights: true,
    };
    let s = bootstrap(&d, &["soo", "iv", "prox"], tau_statistic, &opts).unwrap();
    for k in 0..3 {
        assert_eq!(s.mad[k], 0.0);
        assert_eq!(s.median[k], s.point[k]);
    }
}

#[test]
fn excessive_replicate_failures_become_an_error() {
    let c = Config {
        n: 100,
        seed: 91,
        ..Config::preset(Preset::Confounded)
    };
    let d = sim::simulate(&c).unwrap();
    let opts = BootstrapOptions {
        replicates: 40,
        seed: 2,
        equal_weights: false,
    };
    // Fails whenever the first row's weight drops below 0.9, which happens
    // for most exponential draws but never for the unit-weight point
    // estimate.
    let flaky = |db: &Dataset| -> sensa::error::Result<Vec<f64>> {
        if db.weights()[0] < 0.9 {
            Err(Error::Degenerate("synthetic failure".into()))
        } else {
            Ok(vec![1.0])
        }
    };
    match bootstrap(&d, &["stat"], flaky, &opts) {
        Err(Error::Bootstrap { failed, total }) => {
            assert_eq!(total, 40);
            assert!(failed * 5 > total);
        }
        other => panic!("expected a bootstrap failure report, got {other:?}"),
    }

    // Rare failures are tolerated and counted, and non-finite values count
    // as failures too.
    let rare = |db: &Dataset| -> sensa::error::Result<Vec<f64>> {
        if db.weights()[0] > 3.5 {
            Ok(vec![f64::NAN])
        } else {
            Ok(vec![db.weights()[1]])
        }
    };
    let s = bootstrap(
        &d,
        &["stat"],
        rare,
        &BootstrapOptions {
            replicates: 400,
            ..opts
        },
    )
    .unwrap();
    assert!(s.failed > 0, "some replicate should draw a large first weight");
    assert!(s.failed * 5 <= 400);
}

#[test]
fn fractional_weights_keep_single_row_indicators_alive() {
    // A covariate that is nonzero on exactly one row would be wiped out by
    // index resampling in roughly a third of replicates, breaking the
    // design. Strictly positive fractional weights keep it identifying in
    // every replicate.
    let c = Config {
        n: 120,
        seed: 92,
        ..Config::preset(Preset::Confounded)
    };
    let base = sim::simulate(&c).unwrap();
    let mut indicator = vec![0.0; 120];
    indicator[7] = 1.0;
    let schema = RoleSchema {
        covariates: vec!["flag".into()],
        ..sim::simulation_schema()
    };
    let d = Dataset::from_columns(
        schema,
        &[
            ("w_z", base.column_w_z().to_vec()),
            ("w_y", base.column_w_y().to_vec()),
            ("z", base.column_z().to_vec()),
            ("y", base.column_y().to_vec()),
            ("flag", indicator),
        ],
    )
    .unwrap();
    let soo_only = |db: &Dataset| -> sensa::error::Result<Vec<f64>> {
        let r = partial_out(db, None)?;
        Ok(vec![sensa::estimators::estimate_soo(&r)?.tau])
    };
    let s = bootstrap(
        &d,
        &["soo"],
        soo_only,
        &BootstrapOptions {
            replicates: 100,
            seed: 3,
            equal_weights: false,
        },
    )
    .unwrap();
    assert_eq!(s.failed, 0);
    assert!(s.mad[0] > 0.0);
}

#[test]
fn bootstrap_rejects_empty_or_mismatched_configurations() {
    let c = Config {
        n: 60,
        ..Config::preset(Preset::Confounded)
    };
    let d = sim::simulate(&c).unwrap();
    let stat = |_: &Dataset| -> sensa::error::Result<Vec<f64>> { Ok(vec![1.0, 2.0]) };
    let zero = BootstrapOptions {
        replicates: 0,
        ..BootstrapOptions::default()
    };
    assert!(matches!(
        bootstrap(&d, &["a", "b"], stat, &zero),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        bootstrap(&d, &["a"], stat, &BootstrapOptions::default()),
        Err(Error::Dimension(_))
    ));
}
