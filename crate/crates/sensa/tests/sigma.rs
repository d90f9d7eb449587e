//! Checks the confounder-extension parameterization: round-trips, positive
//! definiteness at the clamp, exact preservation of the observed block, the
//! structure of preset violation vectors, and the reduction of bias to the
//! two confounding parameters.

mod common;

use approx::assert_abs_diff_eq;
use common::{random_config, rel_err};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sensa::sigma::{
    bias_at, extend_covariance, recover_rho, tau_true, violations, Rho, SooBiasScale, RHO_CLAMP,
};
use sensa::sim::{self, Config, Preset};
use sensa::{var, Error, Strategy};

fn observed(seed: u64) -> sensa::linalg::SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sim::population_observed(&random_config(&mut rng, false)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extension_round_trips_the_parameters(
        seed in 0u64..1000,
        r1 in -0.98f64..0.98,
        r2 in -0.98f64..0.98,
        r3 in -0.98f64..0.98,
        r4 in -0.98f64..0.98,
    ) {
        let obs = observed(seed);
        let rho = Rho::new(r1, r2, r3, r4);
        let ext = extend_covariance(&obs, &rho).unwrap();
        let back = recover_rho(&ext).unwrap();
        for (a, b) in rho.as_array().iter().zip(back.as_array()) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        prop_assert!(ext.is_pd());
    }

    #[test]
    fn extension_stays_positive_definite_at_the_clamp(
        seed in 0u64..1000,
        idx in 0usize..4,
        sign in prop::bool::ANY,
    ) {
        let obs = observed(seed);
        let mut a = [0.4, -0.3, 0.5, -0.2];
        a[idx] = if sign { 2.0 } else { -2.0 };
        let rho = Rho::from_array(a);
        let ext = extend_covariance(&obs, &rho).unwrap();
        prop_assert!(ext.is_pd());
        let back = recover_rho(&ext).unwrap();
        prop_assert!((back.as_array()[idx].abs() - RHO_CLAMP).abs() < 1e-9);
    }
}

#[test]
fn extension_preserves_the_observed_block_exactly() {
    let obs = observed(42);
    let ext = extend_covariance(&obs, &Rho::new(0.3, -0.5, 0.7, 0.1)).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(ext.get(i, j), obs.get(i, j), "entry ({i}, {j}) drifted");
        }
    }
    assert_eq!(ext.get(var::U, var::U), 1.0);
    assert_eq!(ext.labels()[var::U], "u");
}

#[test]
fn zero_extension_leaves_every_strategy_unbiased_about_selection() {
    let obs = observed(7);
    let ext = extend_covariance(&obs, &Rho::zero()).unwrap();
    // An uncorrelated confounder changes nothing: the true effect equals the
    // selection-on-observables estimand.
    let taus = sensa::estimators::taus_from_moments(&obs).unwrap();
    assert_abs_diff_eq!(tau_true(&ext).unwrap(), taus.soo, epsilon = 1e-12);
    let v = violations(&ext, Strategy::Soo).unwrap();
    assert_abs_diff_eq!(v.values[0], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(v.values[1], 0.0, epsilon = 1e-12);
}

#[test]
fn recovering_from_a_generated_population_reproduces_the_true_effect() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let c = random_config(&mut rng, false);
        let full = sim::population_covariance(&c).unwrap();
        let obs = sim::population_observed(&c).unwrap();
        let rho = recover_rho(&full).unwrap();
        let rebuilt = extend_covariance(&obs, &rho).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!(
                    (rebuilt.get(i, j) - full.get(i, j)).abs() < 1e-10,
                    "rebuilt extension drifted at ({i}, {j})"
                );
            }
        }
        assert!(rel_err(tau_true(&rebuilt).unwrap(), c.tau) < 1e-10);
    }
}

#[test]
fn preset_structures_zero_the_right_violation_components() {
    // Valid selection on observables: no confounder in the outcome equation.
    // The treatment-side component survives; only the outcome one vanishes.
    let ext = sim::population_covariance(&Config::preset(Preset::ValidSoo)).unwrap();
    let v = violations(&ext, Strategy::Soo).unwrap();
    assert_eq!(v.names, ["confounding_z", "confounding_y"]);
    assert!(v.values[0].abs() > 0.05);
    assert_abs_diff_eq!(v.values[1], 0.0, epsilon = 1e-12);

    let ext = sim::population_covariance(&Config::preset(Preset::ValidIv)).unwrap();
    let v = violations(&ext, Strategy::Iv).unwrap();
    assert_eq!(v.names, ["exogeneity", "exclusion"]);
    assert_abs_diff_eq!(v.values[0], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(v.values[1], 0.0, epsilon = 1e-12);

    let ext = sim::population_covariance(&Config::preset(Preset::ValidProx)).unwrap();
    let v = violations(&ext, Strategy::Prox).unwrap();
    assert_eq!(v.names, ["exclusion", "proxy_z", "proxy_wz"]);
    for (name, value) in v.names.iter().zip(&v.values) {
        assert_abs_diff_eq!(*value, 0.0, epsilon = 1e-12);
        let _ = name;
    }

    let ext = sim::population_covariance(&Config::preset(Preset::Confounded)).unwrap();
    for strategy in Strategy::ALL {
        let v = violations(&ext, strategy).unwrap();
        assert!(
            v.norm_sq() > 1e-3,
            "{strategy} violations should all be active under confounding"
        );
    }
}

#[test]
fn conditioning_on_the_outcome_proxy_can_manufacture_exogeneity_violations() {
    // The treatment proxy has no structural confounder loading, yet because
    // the outcome proxy responds to both, adjusting for it correlates the
    // two: the instrumental exogeneity component is nonzero.
    let c = Config {
        phi_u: 0.0,
        ..Config::preset(Preset::Confounded)
    };
    let ext = sim::population_covariance(&c).unwrap();
    let v = violations(&ext, Strategy::Iv).unwrap();
    assert!(
        v.values[0].abs() > 0.02,
        "exogeneity component is {}, expected a clear collider effect",
        v.values[0]
    );
}

#[test]
fn bias_depends_on_rho_only_through_the_confounding_pair() {
    let obs = observed(11);
    let taus = sensa::estimators::taus_from_moments(&obs).unwrap();
    let a = Rho::new(0.1, -0.6, 0.45, -0.35);
    let b = Rho::new(-0.8, 0.3, 0.45, -0.35);
    for strategy in Strategy::ALL {
        let ba = bias_at(&obs, &taus, &a, strategy).unwrap();
        let bb = bias_at(&obs, &taus, &b, strategy).unwrap();
        assert_abs_diff_eq!(ba, bb, epsilon = 1e-10);
    }
}

#[test]
fn bias_splits_into_estimand_gap_plus_selection_kernel() {
    let obs = observed(13);
    let taus = sensa::estimators::taus_from_moments(&obs).unwrap();
    let scale = SooBiasScale::new(&obs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        use rand::Rng;
        let rho = Rho::new(
            rng.gen_range(-0.9..0.9),
            rng.gen_range(-0.9..0.9),
            rng.gen_range(-0.9..0.9),
            rng.gen_range(-0.9..0.9),
        );
        let kernel = scale.bias(rho.r3, rho.r4).unwrap();
        for strategy in Strategy::ALL {
            let gap = taus.get(strategy) - taus.soo;
            let direct = bias_at(&obs, &taus, &rho, strategy).unwrap();
            assert_abs_diff_eq!(direct, gap + kernel, epsilon = 1e-10);
        }
    }
}

#[test]
fn the_selection_kernel_matches_the_bias_formula() {
    let obs = observed(15);
    let scale = SooBiasScale::new(&obs).unwrap();
    let rho = Rho::new(0.0, 0.0, 0.4, -0.6);
    let ext = extend_covariance(&obs, &rho).unwrap();
    let direct = sensa::bias::bias_soo_from_extended(&ext).unwrap();
    assert_abs_diff_eq!(
        scale.bias(rho.r3, rho.r4).unwrap(),
        direct,
        epsilon = 1e-12
    );
    assert!(scale.max_abs_bias() > scale.k() * 20.0);
    assert!(matches!(
        scale.bias(1.0, 0.5),
        Err(Error::Domain { .. })
    ));
}

#[test]
fn malformed_matrices_are_rejected() {
    let obs = observed(21);
    assert!(recover_rho(&obs).is_err());
    let ext = extend_covariance(&obs, &Rho::zero()).unwrap();
    assert!(tau_true(&obs).is_err());
    assert!(extend_covariance(&ext, &Rho::zero()).is_err());
    assert!(extend_covariance(&obs, &Rho::new(f64::NAN, 0.0, 0.0, 0.0)).is_err());
}
